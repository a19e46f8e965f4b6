"""
Tests for VAR estimation, AIC order selection, pruning and prediction on score series.
"""

import numpy as np
import pytest

from vfts.error_handler import InsufficientData, LabelMismatch, ShortHistory
from vfts.synth import simulate_var
from vfts.var_engine import (
    ScoreSeries,
    VarModel,
    aic_table,
    companion_spectral_radius,
    fit_var,
    lag_matrix,
    predict_var,
    prune_coefficients,
    residuals,
    select_labels,
    select_order_aic,
)


def _series(values, prefix="x"):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return ScoreSeries(values, tuple(f"{prefix}{j + 1}" for j in range(values.shape[1])))


def _simulated(coefficients, n, seed, covariance=None):
    coefficients = np.asarray(coefficients, dtype=float)
    q = coefficients.shape[-1]
    covariance = np.eye(q) if covariance is None else covariance
    rng = np.random.default_rng(seed)
    return _series(simulate_var(coefficients, covariance, n, rng))


def test_zero_order_predicts_zero():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(200, 3))
    values -= values.mean(axis=0)
    series = _series(values)
    model = fit_var(series, 0)

    assert np.all(predict_var(model, values[-1:], 4) == 0.0)
    assert np.allclose(model.residual_covariance, np.cov(values.T, bias=True))
    assert np.array_equal(residuals(model, series), values)


def test_hand_recursion():
    model = VarModel(order=1, coefficients=np.array([[[0.5]]]), mask=np.ones((1, 1, 1), dtype=bool),
                     residual_covariance=np.eye(1), n_effective=10, labels=("x1",))
    assert np.allclose(predict_var(model, np.array([[2.0]]), 3)[:, 0], [1.0, 0.5, 0.25])


def test_stable_forecasts_decay():
    series = _simulated([[[0.5, 0.1], [0.0, 0.4]]], 500, seed=1)
    model = fit_var(series, 1)
    forecasts = predict_var(model, series.values, 60)
    assert np.linalg.norm(forecasts[-1]) < 1e-6 * np.linalg.norm(forecasts[0])


def test_short_history():
    series = _simulated([[[0.5]]], 100, seed=2)
    model = fit_var(series, 2)
    with pytest.raises(ShortHistory):
        predict_var(model, series.values[-1:], 1)


def test_var1_estimates():
    truth = np.array([[0.5, 0.0], [0.0, 0.3]])
    estimates = np.array([fit_var(_simulated([truth], 2000, seed), 1).coefficients[0] for seed in range(10)])
    assert np.all(np.abs(np.median(estimates, axis=0) - truth) < 0.05)


def test_residual_covariance_close_to_innovations():
    truth = np.array([[0.5, 0.0], [0.0, 0.3]])
    covariance = np.array([[1.0, 0.3], [0.3, 2.0]])
    estimates = np.array([fit_var(_simulated([truth], 2000, seed, covariance), 1).residual_covariance
                          for seed in range(10)])
    assert np.all(np.abs(np.median(estimates, axis=0) - covariance) <= 0.1 * np.abs(covariance).max())


def test_white_noise_coefficients_small():
    for seed in range(10):
        series = _series(np.random.default_rng(seed).normal(size=(2000, 2)))
        model = fit_var(series, 1)
        assert np.all(np.abs(model.coefficients) < 0.1)
        assert np.all(np.abs(model.coefficients / model.std_errors) < 4.5)


def test_residuals_orthogonal_to_regressors():
    series = _simulated([[[0.4, 0.2], [0.1, 0.3]]], 300, seed=4)
    model = fit_var(series, 2)
    resid = residuals(model, series)
    X = lag_matrix(series.values, 2, 2)

    bound = 1e-8 * np.outer(np.linalg.norm(X, axis=0), np.linalg.norm(resid, axis=0))
    assert np.all(np.abs(X.T @ resid) <= bound)


def test_one_step_prediction_reproduces_fitted_values():
    series = _simulated([[[0.4, 0.2], [0.1, 0.3]]], 200, seed=5)
    model = fit_var(series, 2)
    resid = residuals(model, series)
    for i in (2, 50, 199):
        predicted = predict_var(model, series.values[:i], 1)[0]
        assert np.allclose(predicted, series.values[i] - resid[i - 2], atol=1e-12)


def test_permutation_equivariance():
    series = _simulated([[[0.4, 0.2, 0.0], [0.1, 0.3, 0.0], [0.0, 0.2, 0.5]]], 400, seed=6)
    perm = [2, 0, 1]
    permuted = ScoreSeries(series.values[:, perm], tuple(series.labels[j] for j in perm))
    model = fit_var(series, 2)
    other = fit_var(permuted, 2)

    for k in range(2):
        assert np.allclose(other.coefficients[k], model.coefficients[k][np.ix_(perm, perm)], atol=1e-12)


def test_masked_coefficients_are_zero():
    series = _simulated([[[0.4, 0.2], [0.1, 0.3]]], 300, seed=7)
    mask = np.ones((1, 2, 2), dtype=bool)
    mask[0, 0, 1] = False
    model = fit_var(series, 1, mask=mask)
    assert model.coefficients[0, 0, 1] == 0.0
    assert model.n_parameters == 3


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        fit_var(_series(np.ones((3, 2))), 2)
    with pytest.raises(InsufficientData):
        select_order_aic(_series(np.random.default_rng(0).normal(size=(4, 2))), 1)


@pytest.mark.slow
def test_aic_selects_zero_for_white_noise():
    hits = sum(select_order_aic(_series(np.random.default_rng(seed).normal(size=(1000, 3))), 8) == 0
               for seed in range(20))
    assert hits >= 16


@pytest.mark.slow
def test_aic_selects_second_order():
    a, b = 0.2, 0.35
    coefficients = np.array([a * np.eye(3), b * np.eye(3)])
    assert companion_spectral_radius(coefficients) == pytest.approx(0.7)
    hits = sum(select_order_aic(_simulated(coefficients, 1000, seed), 8) == 2 for seed in range(20))
    assert hits >= 16


def test_aic_at_feasibility_boundary():
    series = _series(np.random.default_rng(3).normal(size=(5, 2)))
    assert select_order_aic(series, 1) in (0, 1)


def test_aic_penalty_strictly_increasing():
    series = _simulated([[[0.3, 0.0], [0.0, 0.3]]], 300, seed=8)
    table = aic_table(series, 5)
    logdets = np.array([np.linalg.slogdet(fit_var(series, p, start=5).residual_covariance)[1] for p in range(6)])
    assert np.all(np.diff(table - logdets) > 0)


def test_prune_keeps_strong_coefficients():
    series = _simulated([[[0.8]]], 2000, seed=9)
    model = fit_var(series, 1)
    pruned = prune_coefficients(series, model, 1.96)
    assert np.array_equal(pruned.mask, model.mask)


@pytest.mark.slow
def test_prune_removes_white_noise_coefficients():
    kept = 0
    for seed in range(20):
        series = _series(np.random.default_rng(seed).normal(size=(2000, 3)))
        pruned = prune_coefficients(series, fit_var(series, 1), 1.96)
        kept += pruned.n_parameters
    assert kept <= 0.1 * 20 * 9


def test_prune_zero_threshold_is_identity():
    series = _simulated([[[0.2, 0.0], [0.0, 0.1]]], 200, seed=10)
    model = fit_var(series, 1)
    assert prune_coefficients(series, model, 0) is model


def test_prune_is_idempotent():
    series = _simulated([[[0.4, 0.05, 0.0], [0.0, 0.3, 0.0], [0.1, 0.0, 0.5]]], 500, seed=11)
    once = prune_coefficients(series, fit_var(series, 2))
    twice = prune_coefficients(series, once)
    assert np.array_equal(once.mask, twice.mask)
    assert np.allclose(once.coefficients, twice.coefficients)


def test_residuals_need_matching_labels():
    series = _simulated([[[0.5]]], 100, seed=12)
    model = fit_var(series, 1)
    with pytest.raises(LabelMismatch):
        residuals(model, _series(series.values, prefix="y"))


def test_select_labels_reorders_columns():
    series = _series(np.arange(12.0).reshape(4, 3))
    sub = select_labels(series, ["x3", "x1"])
    assert sub.labels == ("x3", "x1")
    assert np.array_equal(sub.values[:, 0], series.values[:, 2])
