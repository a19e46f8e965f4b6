"""
Residual whiteness diagnostics for fitted VAR models: per-lag
cross-correlation-matrix tests and the multivariate (Hosking) portmanteau test.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy import linalg, stats

from vfts.config import ADEQUACY_LAGS, ADEQUACY_MAX_SIGNIFICANT, DEFAULT_ALPHA
from vfts.error_handler import InsufficientData, SingularCovariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WhitenessReport:
    """Entry k-1 of every array refers to lag k."""
    max_lag: int
    ccm_statistics: np.ndarray
    ccm_p_values: np.ndarray
    portmanteau_statistics: np.ndarray
    portmanteau_p_values: np.ndarray
    fitted_order: int
    q: int
    alpha: float = DEFAULT_ALPHA
    significant_ccm_lags: List[int] = field(default_factory=list)
    adequate_first_5: bool = True
    adequate: bool = True

    def to_frame(self) -> pd.DataFrame:
        """Two-panel plot data: lag, CCM p-value, portmanteau p-value, reference line."""
        return pd.DataFrame({
            "lag": np.arange(1, self.max_lag + 1),
            "ccm_p_value": self.ccm_p_values,
            "portmanteau_p_value": self.portmanteau_p_values,
            "reference": np.full(self.max_lag, self.alpha),
        })


def _check_sample(residuals: np.ndarray, max_lag: int) -> np.ndarray:
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim == 1:
        residuals = residuals[:, None]
    m, q = residuals.shape
    if max_lag < 0:
        raise ValueError(f"max_lag must be nonnegative, got {max_lag}")
    if m <= max_lag + q:
        raise InsufficientData(f"{m} residual rows are too few for {max_lag} lags of dimension {q}",
                               {"m": m, "q": q, "max_lag": max_lag})
    return residuals - residuals.mean(axis=0)


def autocovariances(residuals: np.ndarray, max_lag: int) -> np.ndarray:
    """C_l = (1/m) sum_t eps_t eps_{t-l}^T for l = 0..max_lag on centered residuals."""
    m, q = residuals.shape
    return np.array([residuals[l:].T @ residuals[:m - l] / m for l in range(max_lag + 1)])


def _inverse(c0: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(c0)
    except linalg.LinAlgError:
        raise SingularCovariance("Lag-0 residual covariance is not invertible")
    return linalg.cho_solve(factor, np.eye(c0.shape[0]))


def _quadratic_forms(covariances: np.ndarray) -> np.ndarray:
    # tr(C_l^T C_0^-1 C_l C_0^-1) for l = 1..max_lag
    c0_inv = _inverse(covariances[0])
    return np.array([np.trace(c.T @ c0_inv @ c @ c0_inv) for c in covariances[1:]])


def ccm_statistics(residuals: np.ndarray, max_lag: int) -> np.ndarray:
    """
    Per-lag statistic m * vec(R_k)^T (R_0^-1 kron R_0^-1) vec(R_k).

    This is the standardized form: R_k is weighted by the inverse lag-0
    correlation, so it stays chi-square with q^2 dof for correlated
    components. When R_0 is the identity it reduces to m * sum(R_k ** 2).
    """
    centered = _check_sample(residuals, max_lag)
    if max_lag == 0:
        return np.zeros(0)
    m = centered.shape[0]
    # the trace form is invariant to the column scaling that turns C_k into R_k
    return m * _quadratic_forms(autocovariances(centered, max_lag))


def ccm_significance(residuals: np.ndarray, max_lag: int) -> np.ndarray:
    """p-values that the lag-k cross-correlation matrix is null, chi-square with q^2 dof."""
    statistics = ccm_statistics(residuals, max_lag)
    q = np.atleast_2d(np.asarray(residuals).T).shape[0]
    return stats.chi2.sf(statistics, q * q)


def portmanteau_statistics(residuals: np.ndarray, max_lag: int) -> np.ndarray:
    """Hosking's Q_k = m^2 sum_{l<=k} tr(C_l^T C_0^-1 C_l C_0^-1) / (m - l)."""
    centered = _check_sample(residuals, max_lag)
    if max_lag == 0:
        return np.zeros(0)
    m = centered.shape[0]
    terms = _quadratic_forms(autocovariances(centered, max_lag))
    return m * m * np.cumsum(terms / (m - np.arange(1, max_lag + 1)))


def portmanteau_test(residuals: np.ndarray, max_lag: int, fitted_order: int = 0) -> np.ndarray:
    """
    Joint p-values for lags 1..k, chi-square with q^2 (k - p) dof.

    Entries with k <= fitted_order have no degrees of freedom left and are NaN.
    """
    if fitted_order < 0:
        raise ValueError(f"fitted_order must be nonnegative, got {fitted_order}")
    statistics = portmanteau_statistics(residuals, max_lag)
    q = np.atleast_2d(np.asarray(residuals).T).shape[0]
    dof = q * q * (np.arange(1, max_lag + 1) - fitted_order)
    p_values = np.full(max_lag, np.nan)
    usable = dof > 0
    p_values[usable] = stats.chi2.sf(statistics[usable], dof[usable])
    return p_values


def whiteness_report(residuals: np.ndarray, max_lag: int, fitted_order: int = 0,
                     alpha: float = DEFAULT_ALPHA) -> WhitenessReport:
    """
    Both diagnostics plus the adequacy reading.

    A model is adequate when none of the first ADEQUACY_LAGS CCMs is
    significant and at most ADEQUACY_MAX_SIGNIFICANT lags are significant overall.
    """
    residuals = np.asarray(residuals, dtype=float)
    q = 1 if residuals.ndim == 1 else residuals.shape[1]
    ccm_stats = ccm_statistics(residuals, max_lag)
    ccm_p = stats.chi2.sf(ccm_stats, q * q)
    q_stats = portmanteau_statistics(residuals, max_lag)
    q_p = portmanteau_test(residuals, max_lag, fitted_order)
    significant = [k + 1 for k in range(max_lag) if ccm_p[k] < alpha]
    first_clean = not any(k <= ADEQUACY_LAGS for k in significant)
    adequate = first_clean and len(significant) <= ADEQUACY_MAX_SIGNIFICANT
    logger.info(f"Whiteness: significant CCM lags {significant}, first lags clean={first_clean}, adequate={adequate}")
    return WhitenessReport(
        max_lag=max_lag,
        ccm_statistics=ccm_stats,
        ccm_p_values=ccm_p,
        portmanteau_statistics=q_stats,
        portmanteau_p_values=q_p,
        fitted_order=fitted_order,
        q=q,
        alpha=alpha,
        significant_ccm_lags=significant,
        adequate_first_5=first_clean,
        adequate=adequate,
    )
