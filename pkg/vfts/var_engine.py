"""
Vector autoregression on principal component score series: per-equation
OLS with optional zero restrictions, AIC order selection on a common sample,
t-threshold pruning with refit, residuals and iterated forecasts.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from vfts.config import DEFAULT_PRUNE_THRESHOLD, MAX_PRUNE_ITERATIONS
from vfts.error_handler import CollinearRegressors, InsufficientData, LabelMismatch, ShortHistory

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    """Row i is the score vector of the i-th cycle of the series."""
    values: np.ndarray
    labels: Tuple[str, ...]
    origin: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        labels = tuple(self.labels)
        if values.shape[1] != len(labels):
            raise LabelMismatch(f"{values.shape[1]} columns but {len(labels)} labels")
        if len(set(labels)) != len(labels):
            raise LabelMismatch("Series labels must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def column(self, label: str) -> np.ndarray:
        try:
            return self.values[:, self.labels.index(label)]
        except ValueError:
            raise LabelMismatch(f"Unknown label '{label}'", {"labels": list(self.labels)})

    def centered(self) -> "ScoreSeries":
        return replace(self, values=self.values - self.values.mean(axis=0))


@dataclass(frozen=True, eq=False)
class VarModel:
    """
    Fitted VAR(p): xi_i = sum_k Omega_k xi_{i-k} (+ intercept) + eps_i.

    coefficients[k-1] is Omega_k; coefficients[k-1][j, l] multiplies
    column l at lag k in equation j. mask has the same layout.
    """
    order: int
    coefficients: np.ndarray
    mask: np.ndarray
    residual_covariance: np.ndarray
    n_effective: int
    labels: Tuple[str, ...]
    std_errors: np.ndarray = None
    intercept: Optional[np.ndarray] = None
    start: int = 0

    @property
    def q(self) -> int:
        return len(self.labels)

    @property
    def n_parameters(self) -> int:
        return int(self.mask.sum())


def select_labels(series: ScoreSeries, labels: Sequence[str]) -> ScoreSeries:
    """Sub-series holding only the given components, in the given order."""
    columns = [series.column(label) for label in labels]
    return ScoreSeries(np.column_stack(columns), tuple(labels), origin=f"{series.origin}[{','.join(labels)}]")


def lag_matrix(values: np.ndarray, p: int, start: int) -> np.ndarray:
    """Rows start..n-1 of [xi_{i-1}, ..., xi_{i-p}] (lag-major column blocks)."""
    n = values.shape[0]
    if p == 0:
        return np.empty((n - start, 0))
    return np.hstack([values[start - k:n - k] for k in range(1, p + 1)])


def _equation_mask(mask: np.ndarray, j: int) -> np.ndarray:
    # mask[k, j, :] over lags k, flattened lag-major to match lag_matrix
    return mask[:, j, :].reshape(-1)


def fit_var(series: ScoreSeries, p: int, mask: Optional[np.ndarray] = None,
            intercept: bool = False, start: Optional[int] = None) -> VarModel:
    """
    Per-equation OLS of xi_i on its p lags, restricted to unmasked regressors.

    Args:
        series: Score series
        p: Autoregressive order
        mask: Boolean (p, q, q) tensor; False pins a coefficient to zero
        intercept: Add a constant to every equation
        start: First response row (default p); a larger value fits on a common sample
    """
    if p < 0:
        raise ValueError(f"VAR order must be nonnegative, got {p}")
    q = series.q
    start = p if start is None else start
    if start < p:
        raise ValueError(f"start={start} leaves lags undefined for p={p}")
    mask = np.ones((p, q, q), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if mask.shape != (p, q, q):
        raise ValueError(f"mask shape {mask.shape} does not match ({p}, {q}, {q})")

    n_eff = series.n - start
    regressors = lag_matrix(series.values, p, start)
    response = series.values[start:]
    width = int(mask.sum(axis=(0, 2)).max(initial=0)) + int(intercept)
    if n_eff <= width:
        raise InsufficientData(
            f"{n_eff} usable rows cannot support {width} regressors per equation",
            {"n": series.n, "p": p, "q": q},
        )

    coefficients = np.zeros((p, q, q))
    std_errors = np.full((p, q, q), np.nan)
    constants = np.zeros(q) if intercept else None
    residuals = np.empty_like(response)

    for j in range(q):
        keep = _equation_mask(mask, j)
        X = regressors[:, keep]
        if intercept:
            X = np.hstack([np.ones((n_eff, 1)), X])
        y = response[:, j]
        if X.shape[1] == 0:
            residuals[:, j] = y
            continue
        beta, _, rank, _ = linalg.lstsq(X, y)
        if rank < X.shape[1]:
            raise CollinearRegressors(f"Regressors of equation {series.labels[j]} are collinear", {"rank": int(rank)})
        resid = y - X @ beta
        residuals[:, j] = resid
        dof = n_eff - X.shape[1]
        sigma2 = resid @ resid / dof if dof > 0 else np.nan
        se = np.sqrt(sigma2 * np.diag(linalg.inv(X.T @ X)))
        if intercept:
            constants[j] = beta[0]
            beta, se = beta[1:], se[1:]
        flat = np.zeros(p * q)
        flat_se = np.full(p * q, np.nan)
        flat[keep] = beta
        flat_se[keep] = se
        coefficients[:, j, :] = flat.reshape(p, q)
        std_errors[:, j, :] = flat_se.reshape(p, q)

    covariance = residuals.T @ residuals / n_eff
    return VarModel(
        order=p,
        coefficients=coefficients,
        mask=mask,
        residual_covariance=(covariance + covariance.T) / 2,
        n_effective=n_eff,
        labels=series.labels,
        std_errors=std_errors,
        intercept=constants,
        start=start,
    )


def _check_order_feasible(series: ScoreSeries, p_max: int) -> None:
    if p_max < 0:
        raise ValueError(f"p_max must be nonnegative, got {p_max}")
    if series.n - p_max <= p_max * series.q + 1:
        raise InsufficientData(
            f"n={series.n} too short for p_max={p_max} with q={series.q}",
            {"n": series.n, "p_max": p_max, "q": series.q},
        )


def feasible_p_max(n: int, q: int, p_max: int) -> int:
    """Largest order up to p_max whose AIC common sample leaves more rows than regressors per equation."""
    p = p_max
    while p > 0 and n - p <= p * q + 1:
        p -= 1
    return p


def aic_table(series: ScoreSeries, p_max: int, intercept: bool = False) -> np.ndarray:
    """
    AIC(p) = ln det Sigma(p) + 2 p q^2 / (n - p_max) for p = 0..p_max on a common sample.

    With intercept=True every candidate carries a constant, matching a model
    later fitted with one; the constant penalty is the same for all p.
    """
    _check_order_feasible(series, p_max)
    n_common = series.n - p_max
    values = []
    for p in range(p_max + 1):
        model = fit_var(series, p, intercept=intercept, start=p_max)
        sign, logdet = np.linalg.slogdet(model.residual_covariance)
        logdet = logdet if sign > 0 else -np.inf
        values.append(logdet + 2.0 * p * series.q ** 2 / n_common)
    return np.array(values)


def select_order_aic(series: ScoreSeries, p_max: int, intercept: bool = False) -> int:
    """AIC-minimizing order; ties go to the smaller order."""
    table = aic_table(series, p_max, intercept)
    p = int(np.argmin(table))
    logger.debug(f"AIC selected p={p} of 0..{p_max}")
    return p


def t_statistics(model: VarModel) -> np.ndarray:
    """Coefficient / standard error; NaN where masked."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(model.mask, model.coefficients / model.std_errors, np.nan)


def prune_coefficients(series: ScoreSeries, model: VarModel,
                       threshold: float = DEFAULT_PRUNE_THRESHOLD,
                       max_iterations: int = MAX_PRUNE_ITERATIONS) -> VarModel:
    """
    Iteratively mask coefficients with |t| below the threshold and refit.

    A fully masked model is returned as the p = 0 model on the same sample.
    """
    if threshold <= 0:
        return model
    intercept = model.intercept is not None
    current = model
    for iteration in range(max_iterations):
        t = np.abs(t_statistics(current))
        keep = current.mask & (np.nan_to_num(t, nan=np.inf) >= threshold)
        if np.array_equal(keep, current.mask):
            break
        if not keep.any():
            logger.info("Pruning removed every coefficient")
            return fit_var(series, 0, intercept=intercept, start=current.start)
        current = fit_var(series, current.order, mask=keep, intercept=intercept, start=current.start)
    else:
        logger.warning(f"Pruning mask not stable after {max_iterations} iterations")
    logger.debug(f"Pruning kept {current.n_parameters} of {model.n_parameters} coefficients")
    return current


def _one_step(model: VarModel, window: np.ndarray) -> np.ndarray:
    # window rows are chronological; the last row is lag 1
    step = np.zeros(model.q) if model.intercept is None else model.intercept.copy()
    for k in range(1, model.order + 1):
        step += model.coefficients[k - 1] @ window[-k]
    return step


def predict_var(model: VarModel, history: np.ndarray, horizon: int) -> np.ndarray:
    """Iterated forecasts for `horizon` steps after the last history row, shape (h, q)."""
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    history = np.atleast_2d(np.asarray(history, dtype=float))
    if history.shape[0] < model.order:
        raise ShortHistory(f"VAR({model.order}) needs {model.order} history rows, got {history.shape[0]}")
    window = list(history[history.shape[0] - model.order:]) if model.order else []
    forecasts = np.empty((horizon, model.q))
    for h in range(horizon):
        step = _one_step(model, np.array(window).reshape(-1, model.q))
        forecasts[h] = step
        if model.order:
            window = window[1:] + [step]
    return forecasts


def fitted_values(model: VarModel, series: ScoreSeries) -> np.ndarray:
    """In-sample one-step predictions for rows p..n-1."""
    if series.labels != model.labels:
        raise LabelMismatch("Series labels differ from model labels",
                            {"model": list(model.labels), "series": list(series.labels)})
    p, q = model.order, model.q
    X = lag_matrix(series.values, p, p)
    omega = model.coefficients.transpose(0, 2, 1).reshape(p * q, q)
    fitted = X @ omega
    if model.intercept is not None:
        fitted = fitted + model.intercept
    return fitted


def residuals(model: VarModel, series: ScoreSeries) -> np.ndarray:
    """eps_i = xi_i - sum_k Omega_k xi_{i-k} for i = p..n-1."""
    return series.values[model.order:] - fitted_values(model, series)


def companion_spectral_radius(coefficients: np.ndarray) -> float:
    """Largest eigenvalue modulus of the VAR companion matrix."""
    coefficients = np.asarray(coefficients, dtype=float)
    p = coefficients.shape[0]
    if p == 0:
        return 0.0
    q = coefficients.shape[1]
    companion = np.zeros((p * q, p * q))
    companion[:q] = np.hstack(list(coefficients))
    companion[q:, :-q] = np.eye((p - 1) * q)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))
