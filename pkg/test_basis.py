"""
Tests for the clamped B-spline basis, its Gram matrix and least-squares smoothing.
"""

import numpy as np
import pytest

from vfts.basis import (
    BasisSpec,
    FunctionalSample,
    design_matrix,
    eval_basis,
    gram_matrix,
    make_basis,
    smooth_curve,
    smooth_sample,
)
from vfts.error_handler import ArgumentOutOfDomain, DimensionTooSmall, InvalidCurve, RankDeficientDesign
from vfts.ingest import Process, RegisteredCurve


def _curve(grid, values, index=0):
    return RegisteredCurve(index, Process.RESET, 0.5, np.asarray(grid, dtype=float), np.asarray(values, dtype=float))


def test_cubic_bernstein_values():
    """With no interior knots the basis is the cubic Bernstein basis."""
    basis = make_basis(4)
    assert np.allclose(eval_basis(basis, 0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)


def test_endpoint_values():
    basis = make_basis(20)
    left = eval_basis(basis, 0.0)
    right = eval_basis(basis, 1.0)
    assert left[0] == pytest.approx(1.0) and np.allclose(left[1:], 0.0)
    assert right[-1] == pytest.approx(1.0) and np.allclose(right[:-1], 0.0)


def test_partition_of_unity():
    basis = make_basis(12)
    t = np.linspace(0.0, 1.0, 97)
    assert np.allclose(design_matrix(basis, t).sum(axis=1), 1.0, atol=1e-13)


def test_equally_spaced_interior_knots():
    basis = make_basis(20)
    assert basis.knots.size == 24
    assert np.allclose(basis.interior_knots, np.arange(1, 17) / 17)


def test_dimension_below_order():
    with pytest.raises(DimensionTooSmall):
        make_basis(3)


def test_argument_outside_unit_interval():
    with pytest.raises(ArgumentOutOfDomain):
        eval_basis(make_basis(8), 1.5)


def test_gram_of_cubic_bernstein():
    gram = gram_matrix(make_basis(4))
    assert gram[0, 0] == pytest.approx(1 / 7, abs=1e-14)
    assert gram[0, 3] == pytest.approx(1 / 140, abs=1e-14)


def test_gram_sums_to_one_and_is_positive_definite():
    for dimension in (4, 8, 20):
        gram = gram_matrix(make_basis(dimension))
        assert gram.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() > 0


def test_gram_matches_dense_trapezoid():
    basis = make_basis(20)
    t = np.linspace(0.0, 1.0, 10001)
    B = design_matrix(basis, t)
    dense = np.trapz(B[:, :, None] * B[:, None, :], t, axis=0)
    assert np.allclose(gram_matrix(basis), dense, atol=1e-7)


def test_local_support():
    """Function j vanishes outside its knot span [t_j, t_(j+4)]."""
    basis = make_basis(12)
    t = np.linspace(0.0, 1.0, 501)
    B = design_matrix(basis, t)
    for j in range(basis.dimension):
        lo, hi = basis.knots[j], basis.knots[j + basis.order]
        outside = (t < lo) | (t > hi)
        assert np.all(B[outside, j] == 0.0)
        assert np.all(B[:, j] >= -1e-15)


def test_smoothing_residuals_orthogonal_to_design():
    basis = make_basis(15)
    rng = np.random.default_rng(6)
    grid = np.sort(rng.uniform(0.0, 1.0, 120))
    values = np.sin(6 * grid) + rng.normal(scale=0.1, size=grid.size)
    coefficients = smooth_curve(_curve(grid, values), basis)

    B = design_matrix(basis, grid)
    residuals = values - B @ coefficients
    assert np.allclose(B.T @ residuals, 0.0, atol=1e-10)


def test_basis_equality_by_knots():
    assert make_basis(10) == make_basis(10)
    assert make_basis(10) != make_basis(11)
    with pytest.raises(ArgumentOutOfDomain):
        BasisSpec(4, np.array([0, 0, 0, 0.1, 1, 1, 1, 1.0]))


def test_smoothing_recovers_spline_coefficients():
    basis = make_basis(10)
    rng = np.random.default_rng(4)
    coefficients = rng.normal(size=10)
    grid = np.linspace(0.02, 1.0, 50)
    values = design_matrix(basis, grid) @ coefficients

    assert np.allclose(smooth_curve(_curve(grid, values), basis), coefficients, atol=1e-10)


def test_smoothing_reproduces_constants_and_lines():
    basis = make_basis(20)
    grid = np.sort(np.random.default_rng(1).uniform(0.01, 0.99, 200))
    grid = np.append(grid, 1.0)

    constant = smooth_curve(_curve(grid, np.full(grid.size, -9.0)), basis)
    assert np.allclose(constant, -9.0, atol=1e-10)

    line = smooth_curve(_curve(grid, 2.0 + 3.0 * grid), basis)
    t = np.linspace(0, 1, 11)
    assert np.allclose(design_matrix(basis, t) @ line, 2.0 + 3.0 * t, atol=1e-10)


def test_too_few_points_for_dimension():
    grid = np.linspace(0.2, 1.0, 5)
    with pytest.raises(RankDeficientDesign):
        smooth_curve(_curve(grid, grid), make_basis(20))


def test_smooth_sample_orders_cycles():
    basis = make_basis(6)
    grid = np.linspace(0.05, 1.0, 20)
    curves = [_curve(grid, grid * k, index=k) for k in (3, 1, 2)]
    sample = smooth_sample(curves, basis)

    assert sample.cycle_indices == (1, 2, 3)
    assert sample.process == "reset"
    assert np.allclose(sample.evaluate([1.0])[:, 0], [1.0, 2.0, 3.0])


def test_functional_sample_subsets():
    basis = make_basis(4)
    sample = FunctionalSample(basis, np.arange(12.0).reshape(3, 4), (5, 7, 9), "set")

    assert sample.drop_cycles([7]).cycle_indices == (5, 9)
    assert np.array_equal(sample.select_cycles([7]).coefficients, [[4.0, 5.0, 6.0, 7.0]])
    with pytest.raises(InvalidCurve):
        FunctionalSample(basis, np.zeros((2, 4)), (2, 1), "set")
    with pytest.raises(InvalidCurve):
        FunctionalSample(basis, np.zeros((2, 5)), (1, 2), "set")
