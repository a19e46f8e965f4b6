"""
FPCA-VAR and MFPCA-VAR forecasting pipelines.

Univariate approach: one FPCA per process, the leading scores of every
process stacked into one vector, a single VAR on the stack. Multivariate
approach: one joint FPCA of all processes and a VAR on its leading scores.
Curves are predicted by pushing forecast scores through the truncated
Karhunen-Loeve expansion.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate

from vfts.basis import FunctionalSample
from vfts.config import DEFAULT_EVAL_POINTS, DEFAULT_FORECAST_MODE, FORECAST_MODES, PipelineConfig
from vfts.error_handler import CycleMisalignment, GridMismatch, HoldoutTooLarge, LagOutOfRange
from vfts.fpca import (PcaModel, choose_q, eigenfunction_values, fpca_multivariate, fpca_univariate,
                       mean_values, project)
from vfts.var_engine import (ScoreSeries, VarModel, feasible_p_max, fit_var, predict_var, prune_coefficients,
                             select_order_aic)

logger = logging.getLogger(__name__)


class Approach(Enum):
    UNIVARIATE = "univariate"
    MULTIVARIATE = "multivariate"


def evaluation_grid(n_points: int = DEFAULT_EVAL_POINTS) -> np.ndarray:
    if n_points < 2:
        raise GridMismatch(f"Evaluation grid needs at least 2 points, got {n_points}")
    return np.linspace(0.0, 1.0, n_points)


def score_labels(approach: Approach, processes: Sequence[str], q: Sequence[int]) -> Tuple[str, ...]:
    """RPC1, RPC2, SPC1, ... for the univariate stack; MPC1, MPC2, ... for the joint scores."""
    if approach is Approach.MULTIVARIATE:
        return tuple(f"MPC{j + 1}" for j in range(q[0]))
    return tuple(f"{name[0].upper()}PC{j + 1}" for name, qh in zip(processes, q) for j in range(qh))


@dataclass(frozen=True, eq=False)
class ForecastBundle:
    """
    Everything needed to forecast: the fitted (M)FPCA models, the retained
    component counts, the VAR and the training score series it was fitted on.

    For the univariate approach pcas and q hold one entry per process; for
    the multivariate approach a single entry each.
    """
    approach: Approach
    pcas: Tuple[PcaModel, ...]
    q: Tuple[int, ...]
    var: VarModel
    series: ScoreSeries
    train_range: Tuple[int, int]

    @property
    def processes(self) -> Tuple[str, ...]:
        return tuple(label for pca in self.pcas for label in pca.labels)

    @property
    def dimension(self) -> int:
        return sum(self.q)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Curves on a common grid, keyed by process; rows follow cycle_indices."""
    approach: Approach
    mode: str
    grid: np.ndarray
    cycle_indices: Tuple[int, ...]
    predicted: Dict[str, np.ndarray]
    actual: Optional[Dict[str, np.ndarray]] = None
    imse: Optional[Dict[str, np.ndarray]] = None

    def to_frames(self) -> Tuple[Dict[str, pd.DataFrame], pd.DataFrame]:
        """Per-process long tables (cycle, t, predicted, actual) and the IMSE summary."""
        G = self.grid.size
        curves = {}
        for process, predicted in self.predicted.items():
            actual = self.actual[process] if self.actual else np.full_like(predicted, np.nan)
            curves[process] = pd.DataFrame({
                "cycle": np.repeat(self.cycle_indices, G),
                "t": np.tile(self.grid, len(self.cycle_indices)),
                "predicted": predicted.ravel(),
                "actual": actual.ravel(),
            })
        rows = []
        for process, values in (self.imse or {}).items():
            for cycle, value in zip(self.cycle_indices, values):
                rows.append({"cycle": cycle, "process": process, "imse": value,
                             "approach": self.approach.value, "mode": self.mode})
        summary = pd.DataFrame(rows, columns=["cycle", "process", "imse", "approach", "mode"])
        return curves, summary


def _check_aligned(samples: Sequence[FunctionalSample]) -> None:
    if not samples:
        raise CycleMisalignment("No functional samples given")
    reference = samples[0].cycle_indices
    for s in samples[1:]:
        if s.cycle_indices != reference:
            raise CycleMisalignment(f"Sample '{s.process}' is not aligned with '{samples[0].process}'")


def split_train_test(samples: Sequence[FunctionalSample], holdout: int) -> Tuple[Tuple[FunctionalSample, ...], Tuple[FunctionalSample, ...]]:
    """Last `holdout` cycles of every process form the test set; holdout 0 gives an empty test tuple."""
    _check_aligned(samples)
    n = samples[0].n
    if holdout < 0:
        raise ValueError(f"holdout must be nonnegative, got {holdout}")
    if holdout >= n:
        raise HoldoutTooLarge(f"holdout={holdout} leaves no training cycles out of {n}", {"n": n, "holdout": holdout})
    indices = samples[0].cycle_indices
    train = tuple(s.select_cycles(indices[:n - holdout]) for s in samples)
    if holdout == 0:
        return train, ()
    test = tuple(s.select_cycles(indices[n - holdout:]) for s in samples)
    return train, test


def fit_pipeline(train: Sequence[FunctionalSample], approach: Union[Approach, str],
                 config: PipelineConfig = PipelineConfig()) -> ForecastBundle:
    """
    FPCA, component selection, AIC order selection, VAR fit and pruning.

    Args:
        train: One FunctionalSample per process, aligned on cycles
        approach: univariate (stacked per-process scores) or multivariate (joint scores)
        config: Supplies variance_threshold, p_max and prune_threshold
    """
    approach = Approach(approach)
    _check_aligned(train)
    processes = [s.process for s in train]

    if approach is Approach.UNIVARIATE:
        pcas = tuple(fpca_univariate(s) for s in train)
        q = tuple(choose_q(pca.eigenvalues, config.variance_threshold) for pca in pcas)
        scores = np.hstack([pca.scores[:, :qh] for pca, qh in zip(pcas, q)])
    else:
        pcas = (fpca_multivariate(train),)
        q = (choose_q(pcas[0].eigenvalues, config.variance_threshold),)
        scores = pcas[0].scores[:, :q[0]]
    logger.info(f"{approach.value}: retained q={list(q)} of {[p.n_components for p in pcas]}")

    labels = score_labels(approach, processes, q)
    series = ScoreSeries(scores, labels, origin=approach.value)

    p_max = feasible_p_max(series.n, series.q, config.p_max)
    if p_max < config.p_max:
        logger.warning(f"p_max clamped from {config.p_max} to {p_max} for n={series.n}, q={series.q}")
    p = select_order_aic(series, p_max)
    model = fit_var(series, p)
    model = prune_coefficients(series, model, config.prune_threshold)
    logger.info(f"{approach.value}: VAR({p}) with {model.n_parameters} nonzero coefficients")

    indices = train[0].cycle_indices
    return ForecastBundle(approach, pcas, q, model, series, (indices[0], indices[-1]))


def curve_maps(bundle: ForecastBundle, grid: np.ndarray) -> List[Tuple[str, np.ndarray, np.ndarray]]:
    """
    Per process: (name, mean on grid, F on grid).

    F has one column per entry of the score vector, so that a curve is
    mean + F @ xi; under the univariate approach the columns of other
    processes are zero.
    """
    grid = np.asarray(grid, dtype=float)
    maps = []
    if bundle.approach is Approach.MULTIVARIATE:
        pca = bundle.pcas[0]
        for block, mean, F in zip(pca.blocks, mean_values(pca, grid), eigenfunction_values(pca, grid, bundle.q[0])):
            maps.append((block.label, mean, F))
        return maps

    offset = 0
    for pca, qh in zip(bundle.pcas, bundle.q):
        F = np.zeros((grid.size, bundle.dimension))
        F[:, offset:offset + qh] = eigenfunction_values(pca, grid, qh)[0]
        maps.append((pca.labels[0], mean_values(pca, grid)[0], F))
        offset += qh
    return maps


def _curves(bundle: ForecastBundle, scores: np.ndarray, grid: np.ndarray) -> Dict[str, np.ndarray]:
    return {name: mean[None, :] + scores @ F.T for name, mean, F in curve_maps(bundle, grid)}


def forecast_curves(bundle: ForecastBundle, horizon: int, eval_grid: Optional[np.ndarray] = None,
                    history: Optional[np.ndarray] = None) -> ForecastResult:
    """Iterate the VAR `horizon` steps past the history (default: training scores) and map to curves."""
    grid = evaluation_grid() if eval_grid is None else np.asarray(eval_grid, dtype=float)
    history = bundle.series.values if history is None else history
    scores = predict_var(bundle.var, history, horizon)
    last = bundle.train_range[1]
    return ForecastResult(
        approach=bundle.approach,
        mode="iterated",
        grid=grid,
        cycle_indices=tuple(range(last + 1, last + 1 + horizon)),
        predicted=_curves(bundle, scores, grid),
    )


def project_test_scores(bundle: ForecastBundle, test: Sequence[FunctionalSample]) -> np.ndarray:
    """Scores of observed test curves on the trained eigenbasis, in the bundle's score layout."""
    _check_aligned(test)
    if bundle.approach is Approach.MULTIVARIATE:
        return project(bundle.pcas[0], list(test))[:, :bundle.q[0]]
    if len(test) != len(bundle.pcas):
        raise CycleMisalignment(f"Expected {len(bundle.pcas)} test samples, got {len(test)}")
    return np.hstack([project(pca, s)[:, :qh] for pca, s, qh in zip(bundle.pcas, test, bundle.q)])


def predict_test_scores(bundle: ForecastBundle, test: Sequence[FunctionalSample],
                        mode: str = DEFAULT_FORECAST_MODE) -> np.ndarray:
    """
    Forecast scores for every test cycle.

    one_step conditions each forecast on the actual past, projecting the
    observed test curves; iterated runs the VAR forward from the training end.
    """
    if mode not in FORECAST_MODES:
        raise ValueError(f"Unknown forecast mode '{mode}', expected one of {FORECAST_MODES}")
    n_test = test[0].n
    train = bundle.series.values
    if mode == "iterated":
        return predict_var(bundle.var, train, n_test)
    history = np.vstack([train, project_test_scores(bundle, test)])
    n_train = train.shape[0]
    return np.vstack([predict_var(bundle.var, history[:n_train + i], 1) for i in range(n_test)])


def imse(predicted: np.ndarray, actual: np.ndarray, grid: Optional[np.ndarray] = None) -> Union[float, np.ndarray]:
    """
    Integral over [0, 1] of the squared prediction error, trapezoidal rule.

    Works row-wise on (n, G) arrays; grid defaults to G equispaced points.
    """
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise GridMismatch(f"Predicted shape {predicted.shape} differs from actual {actual.shape}")
    G = predicted.shape[-1]
    grid = evaluation_grid(G) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size != G or G < 2:
        raise GridMismatch(f"Grid of {grid.size} points does not match curves of {G}")
    value = integrate.trapezoid((predicted - actual) ** 2, grid, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def evaluate_test(bundle: ForecastBundle, test: Sequence[FunctionalSample],
                  eval_grid: Optional[np.ndarray] = None, mode: str = DEFAULT_FORECAST_MODE) -> ForecastResult:
    """Predict every test cycle and score it against the observed curve."""
    if bundle.processes != tuple(s.process for s in test):
        raise CycleMisalignment(f"Test processes {[s.process for s in test]} differ from {list(bundle.processes)}")
    grid = evaluation_grid() if eval_grid is None else np.asarray(eval_grid, dtype=float)
    predicted = _curves(bundle, predict_test_scores(bundle, test, mode), grid)
    actual = {s.process: s.evaluate(grid) for s in test}
    errors = {name: np.atleast_1d(imse(predicted[name], actual[name], grid)) for name in predicted}
    medians = {k: round(float(np.median(v)), 6) for k, v in errors.items()}
    logger.info(f"{bundle.approach.value}/{mode}: median IMSE {medians}")
    return ForecastResult(bundle.approach, mode, grid, test[0].cycle_indices, predicted, actual, errors)


def baseline_imse(bundle: ForecastBundle, test: Sequence[FunctionalSample],
                  eval_grid: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """IMSE of predicting the training mean function for every test cycle."""
    grid = evaluation_grid() if eval_grid is None else np.asarray(eval_grid, dtype=float)
    means = {name: mean for name, mean, _ in curve_maps(bundle, grid)}
    result = {}
    for s in test:
        actual = s.evaluate(grid)
        result[s.process] = np.atleast_1d(imse(np.broadcast_to(means[s.process], actual.shape), actual, grid))
    return result


def variance_band(bundle: ForecastBundle, eval_grid: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Pointwise one-step prediction variance diag(F(t) Sigma F(t)^T) per process."""
    grid = evaluation_grid() if eval_grid is None else np.asarray(eval_grid, dtype=float)
    sigma = bundle.var.residual_covariance
    return {name: np.einsum("gi,ij,gj->g", F, sigma, F) for name, _, F in curve_maps(bundle, grid)}


def evaluate_operator_kernel(bundle: ForecastBundle, k: int, t: float, s: float) -> np.ndarray:
    """
    Estimated lag-k operator kernel phi_k(t, s) = F(t) Omega_k F(s)^T, an H x H matrix.

    Row h of F(t) is the eigenfunction map of process h at t.
    """
    if not 1 <= k <= bundle.var.order:
        raise LagOutOfRange(f"Lag {k} outside 1..{bundle.var.order}", {"k": k, "p": bundle.var.order})
    F_t = np.vstack([F[0] for _, _, F in curve_maps(bundle, [t])])
    F_s = np.vstack([F[0] for _, _, F in curve_maps(bundle, [s])])
    return F_t @ bundle.var.coefficients[k - 1] @ F_s.T
