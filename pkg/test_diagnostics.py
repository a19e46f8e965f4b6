"""
Tests for residual cross-correlation and portmanteau whiteness diagnostics.
"""

import numpy as np
import pytest

from vfts.diagnostics import (
    ccm_significance,
    ccm_statistics,
    portmanteau_statistics,
    portmanteau_test,
    whiteness_report,
)
from vfts.error_handler import InsufficientData, SingularCovariance
from vfts.synth import simulate_var


def _ar1(n, coefficient, q, seed):
    rng = np.random.default_rng(seed)
    return simulate_var(coefficient * np.eye(q)[None], np.eye(q), n, rng)


def test_zero_lags_give_empty_vectors():
    resid = np.random.default_rng(0).normal(size=(50, 2))
    assert ccm_significance(resid, 0).size == 0
    assert portmanteau_test(resid, 0).size == 0


def test_portmanteau_nondecreasing():
    resid = np.random.default_rng(1).normal(size=(300, 3))
    statistics = portmanteau_statistics(resid, 15)
    assert np.all(np.diff(statistics) >= 0)


def test_univariate_reduction():
    """With one column the statistic is m^2 sum r_k^2 / (m - k) over the sample autocorrelations."""
    e = np.random.default_rng(2).normal(size=200)
    e = e - e.mean()
    m = e.size
    r = np.array([e[k:] @ e[:m - k] / (e @ e) for k in range(1, 11)])
    expected = m * m * np.cumsum(r ** 2 / (m - np.arange(1, 11)))
    assert np.allclose(portmanteau_statistics(e[:, None], 10), expected, rtol=1e-10)


def test_column_rescaling_invariance():
    resid = np.random.default_rng(3).normal(size=(400, 3))
    scaled = resid * [0.01, 5.0, 300.0]
    assert np.allclose(ccm_statistics(scaled, 8), ccm_statistics(resid, 8), rtol=1e-8)
    assert np.allclose(portmanteau_statistics(scaled, 8), portmanteau_statistics(resid, 8), rtol=1e-8)


def test_fitted_order_removes_degrees_of_freedom():
    resid = np.random.default_rng(4).normal(size=(300, 2))
    p_values = portmanteau_test(resid, 6, fitted_order=2)
    assert np.all(np.isnan(p_values[:2]))
    assert np.all((p_values[2:] >= 0) & (p_values[2:] <= 1))


@pytest.mark.slow
def test_ccm_null_calibration():
    rejections = [ccm_significance(np.random.default_rng(seed).normal(size=(500, 2)), 1)[0] < 0.05
                  for seed in range(1000)]
    assert 0.03 <= np.mean(rejections) <= 0.07


@pytest.mark.slow
def test_portmanteau_null_calibration():
    rejections = [portmanteau_test(np.random.default_rng(seed).normal(size=(500, 2)), 5)[4] < 0.05
                  for seed in range(1000)]
    assert 0.03 <= np.mean(rejections) <= 0.07


def test_ccm_detects_unmodelled_dynamics():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        coefficients = np.array([[[0.6, 0.0], [0.2, 0.4]]])
        resid = simulate_var(coefficients, np.eye(2), 1000, rng)
        assert ccm_significance(resid, 3)[0] < 0.01


def test_portmanteau_detects_ar1():
    for seed in range(10):
        assert portmanteau_test(_ar1(1000, 0.5, 1, seed), 5)[4] < 0.01


def test_singular_covariance():
    resid = np.column_stack([np.random.default_rng(5).normal(size=100), np.zeros(100)])
    with pytest.raises(SingularCovariance):
        portmanteau_statistics(resid, 3)


def test_too_few_residuals():
    with pytest.raises(InsufficientData):
        ccm_statistics(np.random.default_rng(6).normal(size=(10, 3)), 7)


def test_report_flags_inadequate_model():
    report = whiteness_report(_ar1(500, 0.7, 2, seed=7), max_lag=10, fitted_order=0)
    assert 1 in report.significant_ccm_lags
    assert not report.adequate_first_5

    frame = report.to_frame()
    assert list(frame.columns) == ["lag", "ccm_p_value", "portmanteau_p_value", "reference"]
    assert frame["lag"].tolist() == list(range(1, 11))
    assert np.all(frame["reference"] == 0.05)


def test_report_on_white_residuals():
    report = whiteness_report(np.random.default_rng(8).normal(size=(500, 2)), max_lag=10, fitted_order=1)
    assert report.q == 2
    assert np.isnan(report.portmanteau_p_values[0])
    assert report.ccm_p_values.shape == (10,)


def test_ccm_reduces_to_sum_of_squared_correlations_for_uncorrelated_columns():
    raw = np.random.default_rng(9).normal(size=(300, 3))
    raw = raw - raw.mean(axis=0)
    m = raw.shape[0]
    # whiten so the lag-0 correlation matrix is exactly the identity
    resid = raw @ np.linalg.inv(np.linalg.cholesky(raw.T @ raw / m)).T
    expected = [m * np.sum((resid[k:].T @ resid[:m - k] / m) ** 2) for k in range(1, 6)]
    assert np.allclose(ccm_statistics(resid, 5), expected, rtol=1e-8)


def test_report_rejects_dependence_at_later_lags():
    """Clean first lags alone do not make a model adequate."""
    rng = np.random.default_rng(10)
    u = rng.normal(size=(2018, 2))
    resid = u[18:] + 0.6 * u[12:-6] + 0.6 * u[6:-12] + 0.6 * u[:-18]
    report = whiteness_report(resid, max_lag=20, alpha=0.001)

    assert {6, 12, 18} <= set(report.significant_ccm_lags)
    assert report.adequate_first_5
    assert not report.adequate
