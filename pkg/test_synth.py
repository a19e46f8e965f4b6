"""
Tests for the synthetic cycle generator and its ground truth.
"""

import json

import numpy as np
import pytest

from vfts.basis import make_basis
from vfts.error_handler import UnstableDynamics
from vfts.ingest import Process, parse_cycles, register_cycles
from vfts.synth import (
    ProcessSpec,
    SynthConfig,
    default_processes,
    dense_curves,
    fourier_function,
    functional_samples,
    generate,
    grid_fpca_oracle,
    l2_inner,
    stationary_covariance,
    write_output,
)


def test_fourier_family_is_orthonormal():
    grid = np.linspace(0.0, 1.0, 2001)
    for i in range(5):
        for j in range(5):
            expected = 1.0 if i == j else 0.0
            assert l2_inner(fourier_function(i, grid), fourier_function(j, grid), grid) == pytest.approx(expected, abs=1e-6)


def test_stationary_covariance_of_ar1():
    covariance = stationary_covariance(np.array([[[0.6]]]), np.eye(1))
    assert covariance[0, 0] == pytest.approx(1 / (1 - 0.36))


def test_generate_is_deterministic():
    config = SynthConfig(n_cycles=20, seed=5)
    first, second = generate(config), generate(config)
    for name in ("reset", "set"):
        for a, b in zip(first.cycles[name], second.cycles[name]):
            assert np.array_equal(a.currents, b.currents)
            assert np.array_equal(a.voltages, b.voltages)


def test_switch_point_recovered_by_detector():
    output = generate(SynthConfig(n_cycles=30, seed=1))
    for spec in default_processes():
        grouped, dropped = register_cycles(output.cycles[spec.name])
        curves = grouped[Process(spec.name)]
        assert dropped == []
        assert len(curves) == 30
        voltages = np.array([c.switch_voltage for c in curves])
        assert np.allclose(voltages, output.truth.switch_voltages[spec.name])
        assert all(c.values.size == spec.n_points for c in curves)


def test_score_variances_match_eigenvalues():
    output = generate(SynthConfig(n_cycles=1000, seed=2))
    eigenvalues = np.concatenate([p.eigenvalues for p in default_processes()])
    assert np.allclose(output.truth.scores.var(axis=0), eigenvalues, rtol=0.2)
    assert output.truth.score_labels == ("RPC1", "RPC2", "RPC3", "SPC1", "SPC2", "SPC3", "SPC4")


def test_persistent_scores_keep_eigenvalues():
    processes = (ProcessSpec(name="reset", eigenvalues=(0.04, 0.01)),)
    output = generate(SynthConfig(n_cycles=2000, processes=processes,
                                  var_coefficients=0.5 * np.eye(2)[None], seed=3))
    assert np.allclose(output.truth.scores.var(axis=0), [0.04, 0.01], rtol=0.2)
    assert np.allclose(output.truth.var_coefficients[0], 0.5 * np.eye(2))


def test_constant_curves_smooth_to_constant_coefficients():
    """No spectrum, no noise and a flat mean leave one coefficient vector for every cycle."""
    spec = ProcessSpec(name="reset", eigenvalues=(0.0, 0.0), noise_sd=0.0, mean_rise=0.0)
    output = generate(SynthConfig(n_cycles=8, processes=(spec,), seed=4))
    sample = functional_samples(output, make_basis(20))[0]

    assert np.allclose(sample.coefficients, sample.coefficients[0], atol=1e-10)
    assert np.allclose(sample.coefficients, spec.mean_level, atol=1e-10)


def test_outliers_recorded():
    processes = (ProcessSpec(name="reset", eigenvalues=(0.005, 0.002)),)
    output = generate(SynthConfig(n_cycles=50, processes=processes, outlier_count=3, seed=6))
    outliers = output.truth.outlier_cycles
    assert len(set(outliers)) == 3
    scores = output.truth.scores[list(outliers)]
    assert np.allclose(np.abs(scores), 10.0 * np.sqrt([0.005, 0.002]))


def test_unstable_dynamics_rejected():
    with pytest.raises(UnstableDynamics):
        generate(SynthConfig(n_cycles=10, var_coefficients=1.1 * np.eye(7)[None]))


def test_early_jump_rejected():
    processes = (ProcessSpec(name="reset", eigenvalues=(5.0, 5.0), n_points=20),)
    with pytest.raises(UnstableDynamics):
        generate(SynthConfig(n_cycles=20, processes=processes, seed=7))


def test_dense_curves_follow_scores():
    output = generate(SynthConfig(n_cycles=5, seed=8))
    grid = np.linspace(0.0, 1.0, 11)
    curves = dense_curves(output.truth, "set", grid)
    spec = output.truth.spec("set")
    assert curves.shape == (5, 11)
    expected = spec.mean(grid) + sum(output.truth.process_scores("set")[0, j] * fourier_function(j, grid)
                                     for j in range(4))
    assert np.allclose(curves[0], expected)


def test_written_output_round_trips(tmp_path):
    output = generate(SynthConfig(n_cycles=6, seed=9))
    written = write_output(output, tmp_path)

    assert sorted(p.name for p in written) == ["ground_truth.json", "reset_cycles.csv", "set_cycles.csv"]
    cycles = parse_cycles(tmp_path / "reset_cycles.csv")
    assert [c.cycle_index for c in cycles] == list(range(6))
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert truth["score_labels"][0] == "RPC1"


def test_grid_oracle_needs_dense_grid():
    with pytest.raises(ValueError):
        grid_fpca_oracle(np.zeros((3, 100)), 0.01)


def test_zero_spectrum_gives_mean_curves(tmp_path):
    spec = ProcessSpec(name="reset", eigenvalues=(0.0, 0.0))
    config = SynthConfig(n_cycles=20, processes=(spec,), var_coefficients=0.5 * np.eye(2)[None], seed=4)
    output = generate(config)
    grid = np.linspace(0.0, 1.0, 51)

    assert np.all(output.truth.scores == 0.0)
    assert np.all(output.truth.var_coefficients == 0.0)
    assert np.allclose(dense_curves(output.truth, "reset", grid), spec.mean(grid)[None, :])

    write_output(output, tmp_path)
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert truth["var_coefficients"] == [[[0.0, 0.0], [0.0, 0.0]]]
