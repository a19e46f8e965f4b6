"""
Tests for group VARs and cross-group transfer functions built from causality decisions.
"""

import numpy as np
import pytest

from vfts.artifacts import load_structured_model, save_structured_model
from vfts.causality import CausalityReport, ResidualLags, causality_matrix
from vfts.error_handler import InsufficientData, LabelMismatch
from vfts.structure import cross_group_causes, fit_structured_model, label_groups
from vfts.var_engine import ScoreSeries

LABELS = ("RPC1", "RPC2", "SPC1")


def _coupled(n=600, seed=0):
    """SPC1 follows its own lag and lagged RPC1; the RPC pair is its own VAR(1)."""
    rng = np.random.default_rng(seed)
    values = np.zeros((n + 50, 3))
    for t in range(1, n + 50):
        values[t, 0] = 0.6 * values[t - 1, 0] + rng.normal()
        values[t, 1] = 0.3 * values[t - 1, 0] + 0.4 * values[t - 1, 1] + rng.normal()
        values[t, 2] = 0.5 * values[t - 1, 2] + 0.8 * values[t - 1, 0] + rng.normal()
    return ScoreSeries(values[50:], LABELS)


def _report(arrows, alpha=0.05):
    decisions = np.zeros((3, 3), dtype=bool)
    for cause, effect in arrows:
        decisions[LABELS.index(effect), LABELS.index(cause)] = True
    p_values = np.where(decisions, 0.001, 0.5)
    np.fill_diagonal(p_values, np.nan)
    return CausalityReport(LABELS, p_values, decisions, np.ones((3, 3, 2), dtype=int), alpha)


def test_label_groups():
    assert label_groups(["RPC1", "RPC2", "SPC1", "SPC2"]) == {"RPC": ("RPC1", "RPC2"), "SPC": ("SPC1", "SPC2")}
    assert label_groups(["MPC1", "MPC2"]) == {"MPC": ("MPC1", "MPC2")}


def test_only_cross_group_arrows_become_inputs():
    report = _report([("RPC1", "SPC1"), ("RPC1", "RPC2")])
    assert cross_group_causes(report, label_groups(LABELS)) == {"SPC1": ["RPC1"]}


def test_group_vars_and_transfer_function():
    series = _coupled()
    model = fit_structured_model(series, _report([("RPC1", "SPC1")]), p_max=4)

    assert set(model.group_models) == {"RPC", "SPC"}
    assert model.group_models["RPC"].labels == ("RPC1", "RPC2")
    assert model.group_models["SPC"].labels == ("SPC1",)
    assert model.labels == LABELS
    assert model.cross_arrows == (("RPC1", "SPC1"),)

    [transfer] = model.transfer_functions
    assert transfer.output_label == "SPC1"
    assert transfer.input_labels == ("RPC1",)
    assert transfer.input_lags == ((1,),)
    assert transfer.input_coefficients[0] == pytest.approx(0.8, abs=0.15)
    assert abs(transfer.t_statistics()[0]) > 5


def test_no_cross_arrows_leaves_group_vars_only():
    model = fit_structured_model(_coupled(seed=1), _report([("RPC1", "RPC2")]), p_max=3)
    assert model.transfer_functions == ()
    assert model.cross_arrows == ()


def test_from_estimated_causality():
    series = _coupled(seed=2)
    report = causality_matrix(series, ResidualLags(4), 0.01)
    model = fit_structured_model(series, report, p_max=4)
    assert ("RPC1", "SPC1") in model.cross_arrows
    assert "SPC1" in [tf.output_label for tf in model.transfer_functions]


def test_rejects_mismatched_or_ungrouped_scores():
    series = _coupled(n=200)
    renamed = CausalityReport(("A1", "A2", "B1"), np.eye(3), np.zeros((3, 3), dtype=bool),
                              np.ones((3, 3, 2), dtype=int), 0.05)
    with pytest.raises(LabelMismatch):
        fit_structured_model(series, renamed)

    joint = ScoreSeries(series.values, ("MPC1", "MPC2", "MPC3"))
    report = CausalityReport(joint.labels, np.eye(3), np.zeros((3, 3), dtype=bool),
                             np.ones((3, 3, 2), dtype=int), 0.05)
    with pytest.raises(InsufficientData):
        fit_structured_model(joint, report)


def test_structured_model_artifact_reloads(tmp_path):
    model = fit_structured_model(_coupled(seed=3), _report([("RPC1", "SPC1")]), p_max=3)
    path = save_structured_model(model, "univariate", tmp_path / "structured.json")
    loaded = load_structured_model(path)

    assert set(loaded.group_models) == {"RPC", "SPC"}
    assert np.allclose(loaded.group_models["SPC"].coefficients, model.group_models["SPC"].coefficients)
    assert loaded.transfer_functions[0].input_lags == ((1,),)
    assert np.allclose(loaded.transfer_functions[0].input_coefficients, model.transfer_functions[0].input_coefficients)
