"""
Granger causality among score series: pairwise F tests, the full pairwise
causality matrix (optionally on AR-prewhitened residuals), partial causality
given conditioning components, and transfer-function models with AR noise.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import statsmodels.api as sm
from scipy import stats

from vfts.config import (
    DEFAULT_ALPHA,
    DEFAULT_CAUSE_LAGS,
    DEFAULT_P_MAX,
    TRANSFER_MAX_ITERATIONS,
    TRANSFER_TOLERANCE,
)
from vfts.error_handler import (
    InsufficientData,
    InvalidLagRequest,
    NonStationaryNoise,
    OverlappingRoles,
    SameVariable,
)
from vfts.var_engine import ScoreSeries, fit_var, residuals, select_order_aic

logger = logging.getLogger(__name__)

ARROW = "←"


@dataclass(frozen=True)
class FixedLags:
    """Test every pair with p own lags and r cause lags on the raw series."""
    p: int = 1
    r: int = DEFAULT_CAUSE_LAGS


@dataclass(frozen=True)
class ResidualLags:
    """
    Prewhiten every column by an AIC-selected AR model, then test the
    residual series with the effect's selected order as own lags.
    """
    p_max: int = DEFAULT_P_MAX
    r: int = DEFAULT_CAUSE_LAGS


LagSelector = Union[FixedLags, ResidualLags]


@dataclass(frozen=True, eq=False)
class CausalityReport:
    """p_values[e, c] is the p-value that labels[c] Granger-causes labels[e]."""
    labels: Tuple[str, ...]
    p_values: np.ndarray
    decisions: np.ndarray
    lags_used: np.ndarray
    alpha: float
    mode: str = "fixed"

    def arrows(self) -> List[Tuple[str, str]]:
        """(cause, effect) pairs judged significant."""
        q = len(self.labels)
        return [(self.labels[c], self.labels[e]) for e in range(q) for c in range(q) if self.decisions[e, c]]


@dataclass(frozen=True, eq=False)
class TransferFunctionModel:
    output_label: str
    input_labels: Tuple[str, ...]
    input_lags: Tuple[Tuple[int, ...], ...]
    input_coefficients: np.ndarray
    input_std_errors: np.ndarray
    noise_ar_order: int
    noise_ar_coefficients: np.ndarray
    intercept: float
    residual_variance: float
    iterations: int = 0

    def t_statistics(self) -> np.ndarray:
        return self.input_coefficients / self.input_std_errors


def _lags(column: np.ndarray, lags: Iterable[int], start: int) -> np.ndarray:
    n = column.shape[0]
    lags = list(lags)
    if not lags:
        return np.empty((n - start, 0))
    return np.column_stack([column[start - k:n - k] for k in lags])


def _ols(y: np.ndarray, X: np.ndarray):
    results = sm.OLS(y, X).fit()
    if results.model.rank < X.shape[1]:
        raise InsufficientData("Collinear regressors in causality regression", {"rank": int(results.model.rank)})
    return results


def _nested_f_test(y: np.ndarray, base: np.ndarray, extra: np.ndarray) -> Tuple[float, float, int, int]:
    """F test that the `extra` block adds nothing to `base`."""
    n_eff = y.shape[0]
    r = extra.shape[1]
    dof = n_eff - base.shape[1] - r
    if dof <= 0:
        raise InsufficientData(f"{n_eff} rows cannot support {base.shape[1] + r} regressors")
    full = _ols(y, np.hstack([base, extra]))
    if full.ssr <= 0:
        return np.inf, 0.0, r, dof
    if base.shape[1] == 0:
        f_stat = ((float(y @ y) - full.ssr) / r) / (full.ssr / dof)
    else:
        f_stat, _, _ = full.compare_f_test(_ols(y, base))
    f_stat = max(float(f_stat), 0.0)
    return f_stat, float(stats.f.sf(f_stat, r, dof)), r, dof


def _conditional_test(series: ScoreSeries, cause: str, effect: str, given: Sequence[str],
                      p: int, r: int, intercept: bool) -> Tuple[float, float, int, int]:
    if r < 1:
        raise InvalidLagRequest("At least one cause lag is required to test causality")
    if p < 0:
        raise InvalidLagRequest(f"Own lag order must be nonnegative, got {p}")
    start = max(p, r)
    n_eff = series.n - start
    n_regressors = p * (1 + len(given)) + r + int(intercept)
    if n_eff <= n_regressors:
        raise InsufficientData(
            f"{series.n} observations cannot support {n_regressors} regressors after {start} lags",
            {"n": series.n, "p": p, "r": r},
        )
    y = series.column(effect)[start:]
    blocks = [_lags(series.column(effect), range(1, p + 1), start)]
    blocks += [_lags(series.column(g), range(1, p + 1), start) for g in given]
    if intercept:
        blocks.insert(0, np.ones((n_eff, 1)))
    base = np.hstack(blocks)
    extra = _lags(series.column(cause), range(1, r + 1), start)
    return _nested_f_test(y, base, extra)


def granger_test(series: ScoreSeries, cause: str, effect: str, p: int, r: int,
                 intercept: bool = True) -> Tuple[float, float]:
    """
    F test of H0: the r lags of `cause` add nothing to p own lags of `effect`.

    Returns:
        (F statistic, p-value)
    """
    if cause == effect:
        raise SameVariable(f"Cause and effect are both '{cause}'")
    f_stat, p_value, _, _ = _conditional_test(series, cause, effect, (), p, r, intercept)
    return f_stat, p_value


def partial_granger(series: ScoreSeries, cause: str, effect: str, given: Iterable[str], p: int, r: int,
                    intercept: bool = True) -> Tuple[float, float]:
    """
    Wald test that `cause` lags are zero given own lags and p lags of each conditioning series.

    Returns:
        (Wald statistic r * F, p-value from the F reference distribution)
    """
    given = tuple(given)
    if cause == effect:
        raise SameVariable(f"Cause and effect are both '{cause}'")
    if cause in given or effect in given or len(set(given)) != len(given):
        raise OverlappingRoles("Cause and effect must not be conditioned on",
                               {"cause": cause, "effect": effect, "given": list(given)})
    f_stat, p_value, r_used, _ = _conditional_test(series, cause, effect, given, p, r, intercept)
    return r_used * f_stat, p_value


def prewhiten(series: ScoreSeries, p_max: int = DEFAULT_P_MAX) -> Tuple[ScoreSeries, List[int]]:
    """
    Residuals of an AIC-selected univariate AR model per column, trimmed to a common length.

    Returns:
        (residual series, selected AR order per column)
    """
    orders, columns = [], []
    for label in series.labels:
        single = ScoreSeries(series.column(label)[:, None], (label,))
        feasible = min(p_max, max(0, (single.n - 2) // 2))
        p = select_order_aic(single, feasible, intercept=True)
        model = fit_var(single, p, intercept=True)
        orders.append(p)
        columns.append(residuals(model, single)[:, 0])
    length = min(c.size for c in columns)
    values = np.column_stack([c[c.size - length:] for c in columns])
    logger.debug(f"Prewhitening orders {dict(zip(series.labels, orders))}")
    return ScoreSeries(values, series.labels, origin=f"prewhitened({series.origin})"), orders


def causality_matrix(series: ScoreSeries, lag_selector: LagSelector = FixedLags(),
                     alpha: float = DEFAULT_ALPHA) -> CausalityReport:
    """Every ordered pair tested; decisions at level alpha."""
    q = series.q
    if q < 2:
        raise InsufficientData("Causality needs at least two components", {"q": q})

    if isinstance(lag_selector, ResidualLags):
        tested, orders = prewhiten(series, lag_selector.p_max)
        mode = "residual"
    else:
        tested, orders = series, [lag_selector.p] * q
        mode = "fixed"

    p_values = np.full((q, q), np.nan)
    lags_used = np.zeros((q, q, 2), dtype=int)
    for e in range(q):
        for c in range(q):
            if c == e:
                continue
            p = orders[e]
            _, p_values[e, c] = granger_test(tested, series.labels[c], series.labels[e], p, lag_selector.r)
            lags_used[e, c] = (p, lag_selector.r)

    decisions = np.nan_to_num(p_values, nan=1.0) < alpha
    logger.info(f"Causality ({mode}) found {int(decisions.sum())} arrows among {q} components")
    return CausalityReport(series.labels, p_values, decisions, lags_used, alpha, mode)


def partial_causality_matrix(series: ScoreSeries, report: CausalityReport,
                             p: int = 1, r: int = DEFAULT_CAUSE_LAGS,
                             alpha: Optional[float] = None) -> CausalityReport:
    """
    Re-test every arrow of a pairwise report given the effect's other significant causes.

    Arrows explained away by the conditioning causes are dropped.
    """
    alpha = report.alpha if alpha is None else alpha
    labels = report.labels
    q = len(labels)
    p_values = report.p_values.copy()
    decisions = report.decisions.copy()
    lags_used = report.lags_used.copy()
    for e in range(q):
        causes = [c for c in range(q) if report.decisions[e, c]]
        if len(causes) < 2:
            continue
        for c in causes:
            given = [labels[g] for g in causes if g != c]
            _, p_values[e, c] = partial_granger(series, labels[c], labels[e], given, p, r)
            lags_used[e, c] = (p, r)
            decisions[e, c] = p_values[e, c] < alpha
    logger.info(f"Partial causality kept {int(decisions.sum())} of {int(report.decisions.sum())} arrows")
    return CausalityReport(labels, p_values, decisions, lags_used, alpha, mode=f"{report.mode}+partial")


def render_arrow_table(report: CausalityReport) -> str:
    """Rows are effects; an arrow in column c marks c as a significant cause."""
    width = max(len(label) for label in report.labels) + 2
    lines = ["".ljust(width) + "".join(label.ljust(width) for label in report.labels)]
    for e, effect in enumerate(report.labels):
        cells = [(ARROW if report.decisions[e, c] else "").ljust(width) for c in range(len(report.labels))]
        lines.append(effect.ljust(width) + "".join(cells))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _fit_ar(u: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return np.zeros(0)
    X = _lags(u, range(1, order + 1), order)
    return sm.OLS(u[order:], X).fit().params


def _ar_filter(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # (1 - phi_1 B - ... - phi_m B^m) x, defined from row m on
    m = phi.size
    out = x[m:].copy()
    for k in range(1, m + 1):
        out -= phi[k - 1] * x[m - k:x.shape[0] - k]
    return out


def _is_stationary(phi: np.ndarray) -> bool:
    if phi.size == 0:
        return True
    # roots of 1 - phi_1 z - ... - phi_m z^m must lie outside the unit circle
    roots = np.roots(np.concatenate([-phi[::-1], [1.0]]))
    return bool(np.all(np.abs(roots) > 1.0))


def fit_transfer_function(series: ScoreSeries, output: str, inputs: Mapping[str, Sequence[int]],
                          noise_ar_order: int,
                          max_iterations: int = TRANSFER_MAX_ITERATIONS,
                          tolerance: float = TRANSFER_TOLERANCE) -> TransferFunctionModel:
    """
    Finite distributed-lag regression of `output` on lagged inputs with AR noise.

    OLS first, then Cochrane-Orcutt iterations: fit AR(noise_ar_order) to the
    regression residuals, filter both sides, re-estimate, until the
    coefficients move less than `tolerance`.
    """
    if not inputs:
        raise InvalidLagRequest("A transfer function needs at least one input")
    if noise_ar_order < 0:
        raise InvalidLagRequest(f"Noise AR order must be nonnegative, got {noise_ar_order}")
    input_labels = tuple(inputs)
    input_lags = tuple(tuple(int(k) for k in inputs[label]) for label in input_labels)
    if any(k < 0 for lags in input_lags for k in lags) or any(not lags for lags in input_lags):
        raise InvalidLagRequest("Input lags must be nonempty lists of nonnegative integers")
    if output in input_labels:
        raise OverlappingRoles(f"'{output}' cannot be its own input")

    start = max(k for lags in input_lags for k in lags)
    n_eff = series.n - start
    n_inputs = sum(len(lags) for lags in input_lags)
    if (n_inputs + 1) + noise_ar_order >= n_eff / 5:
        raise InsufficientData(
            f"{n_eff} usable rows are too few for {n_inputs + 1} regressors and AR({noise_ar_order}) noise",
            {"n": series.n},
        )

    y = series.column(output)[start:]
    X = np.hstack([np.ones((n_eff, 1))] + [
        _lags(series.column(label), lags, start) for label, lags in zip(input_labels, input_lags)
    ])

    beta = sm.OLS(y, X).fit().params
    phi = np.zeros(noise_ar_order)
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        phi = _fit_ar(y - X @ beta, noise_ar_order)
        y_star = _ar_filter(y, phi)
        X_star = np.column_stack([_ar_filter(X[:, j], phi) for j in range(X.shape[1])])
        new_beta = sm.OLS(y_star, X_star).fit().params
        change = np.max(np.abs(new_beta - beta))
        beta = new_beta
        if change < tolerance or noise_ar_order == 0:
            break

    phi = _fit_ar(y - X @ beta, noise_ar_order)
    if not _is_stationary(phi):
        raise NonStationaryNoise("Estimated noise AR polynomial has a root on or inside the unit circle",
                                 {"ar": phi.tolist()})
    y_star = _ar_filter(y, phi)
    X_star = np.column_stack([_ar_filter(X[:, j], phi) for j in range(X.shape[1])])
    final = sm.OLS(y_star, X_star).fit()
    beta, std_errors = final.params, final.bse

    return TransferFunctionModel(
        output_label=output,
        input_labels=input_labels,
        input_lags=input_lags,
        input_coefficients=beta[1:],
        input_std_errors=std_errors[1:],
        noise_ar_order=noise_ar_order,
        noise_ar_coefficients=phi,
        intercept=float(beta[0]),
        residual_variance=float(final.ssr / final.nobs),
        iterations=iterations,
    )
