"""
Clamped cubic B-spline bases on [0, 1] and least-squares smoothing of
registered curves into basis coefficients.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg
from scipy.interpolate import BSpline

from vfts.config import DEFAULT_BASIS_DIMENSION, GAUSS_NODES_PER_SPAN, SPLINE_ORDER
from vfts.error_handler import ArgumentOutOfDomain, DimensionTooSmall, InvalidCurve, RankDeficientDesign
from vfts.ingest import RegisteredCurve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Clamped B-spline basis: K functions of the given order on [0, 1]."""
    dimension: int
    knots: np.ndarray
    order: int = SPLINE_ORDER

    def __post_init__(self):
        if self.dimension < self.order:
            raise DimensionTooSmall(f"Basis dimension {self.dimension} below spline order {self.order}")
        knots = np.asarray(self.knots, dtype=float)
        if knots.shape != (self.dimension + self.order,):
            raise DimensionTooSmall(f"Expected {self.dimension + self.order} knots, got {knots.size}")
        if np.any(knots[:self.order] != 0.0) or np.any(knots[self.dimension:] != 1.0):
            raise ArgumentOutOfDomain("Knots must be clamped to [0, 1]")
        if np.any(np.diff(knots[self.order - 1:self.dimension + 1]) <= 0):
            raise ArgumentOutOfDomain("Interior knots must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "knots", knots)
        knots.setflags(write=False)

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.order:self.dimension]

    @cached_property
    def _spline(self) -> BSpline:
        # identity coefficients: evaluating gives every basis function at once
        return BSpline(self.knots, np.eye(self.dimension), self.degree, extrapolate=False)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BasisSpec) and self.order == other.order
                and self.dimension == other.dimension and np.array_equal(self.knots, other.knots))

    def __hash__(self) -> int:
        return hash((self.dimension, self.order, self.knots.tobytes()))


def make_basis(dimension: int = DEFAULT_BASIS_DIMENSION) -> BasisSpec:
    """Clamped cubic basis with dimension - 4 equally spaced interior knots."""
    if dimension < SPLINE_ORDER:
        raise DimensionTooSmall(f"Basis dimension must be at least {SPLINE_ORDER}, got {dimension}")
    n_interior = dimension - SPLINE_ORDER
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate([np.zeros(SPLINE_ORDER), interior, np.ones(SPLINE_ORDER)])
    return BasisSpec(dimension, knots)


def design_matrix(basis: BasisSpec, grid: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Basis values at every grid point, shape (len(grid), K)."""
    t = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(t < 0.0) or np.any(t > 1.0) or np.any(np.isnan(t)):
        raise ArgumentOutOfDomain("Basis arguments must lie in [0, 1]")
    values = basis._spline(t)
    # the last span is closed on the right, so t = 1 evaluates to the final function
    return np.nan_to_num(values, nan=0.0)


def eval_basis(basis: BasisSpec, t: float) -> np.ndarray:
    """The K basis values at a single argument t in [0, 1]."""
    return design_matrix(basis, [t])[0]


def gram_matrix(basis: BasisSpec) -> np.ndarray:
    """
    Exact Gram matrix W_ab = integral of B_a(t) B_b(t) over [0, 1].

    Gauss-Legendre quadrature per knot span; the integrand is a polynomial of
    degree 2 * (order - 1) on each span, which GAUSS_NODES_PER_SPAN nodes
    integrate exactly.
    """
    nodes, weights = leggauss(GAUSS_NODES_PER_SPAN)
    breaks = np.unique(basis.knots)
    lo, hi = breaks[:-1], breaks[1:]
    half = (hi - lo) / 2
    points = (lo[:, None] + half[:, None] * (nodes[None, :] + 1)).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    B = design_matrix(basis, points)
    gram = (B * w[:, None]).T @ B
    return (gram + gram.T) / 2


def smooth_curve(curve: RegisteredCurve, basis: BasisSpec) -> np.ndarray:
    """
    Unweighted least-squares basis coefficients of one registered curve.

    Solved by an orthogonal (SVD-based) factorization of the design matrix.
    """
    distinct = np.unique(curve.grid).size
    if distinct < basis.dimension:
        raise RankDeficientDesign(
            f"Cycle {curve.cycle_index}/{curve.process.value} has {distinct} distinct points, needs {basis.dimension}",
            {"cycle": curve.cycle_index, "points": int(distinct)},
        )
    B = design_matrix(basis, curve.grid)
    coefficients, _, rank, _ = linalg.lstsq(B, curve.values)
    if rank < basis.dimension:
        raise RankDeficientDesign(
            f"Design matrix of cycle {curve.cycle_index}/{curve.process.value} has rank {rank} < {basis.dimension}",
            {"cycle": curve.cycle_index, "rank": int(rank)},
        )
    return coefficients


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """A time series of smoothed curves: row i holds the coefficients of cycle_indices[i]."""
    basis: BasisSpec
    coefficients: np.ndarray
    cycle_indices: tuple
    process: str

    def __post_init__(self):
        coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        indices = tuple(int(i) for i in self.cycle_indices)
        if coefficients.shape[0] < 1:
            raise InvalidCurve(f"Sample for '{self.process}' holds no curves")
        if coefficients.shape != (len(indices), self.basis.dimension):
            raise InvalidCurve(
                f"Coefficient matrix {coefficients.shape} does not match {len(indices)} cycles x K={self.basis.dimension}"
            )
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InvalidCurve(f"Cycle indices of '{self.process}' must be strictly ascending")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "cycle_indices", indices)

    @property
    def n(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, grid: Sequence[float]) -> np.ndarray:
        """Curve values on a grid, shape (n, len(grid))."""
        return self.coefficients @ design_matrix(self.basis, grid).T

    def select_cycles(self, indices: Iterable[int]) -> "FunctionalSample":
        keep = set(int(i) for i in indices)
        mask = np.array([i in keep for i in self.cycle_indices])
        return self._subset(mask)

    def drop_cycles(self, indices: Iterable[int]) -> "FunctionalSample":
        gone = set(int(i) for i in indices)
        mask = np.array([i not in gone for i in self.cycle_indices])
        return self._subset(mask)

    def _subset(self, mask: np.ndarray) -> "FunctionalSample":
        kept = tuple(i for i, m in zip(self.cycle_indices, mask) if m)
        return FunctionalSample(self.basis, self.coefficients[mask], kept, self.process)


def smooth_sample(curves: Sequence[RegisteredCurve], basis: BasisSpec, process: str = None) -> FunctionalSample:
    """Smooth a batch of registered curves of one process into a FunctionalSample."""
    if not curves:
        raise InvalidCurve("No curves to smooth")
    ordered = sorted(curves, key=lambda c: c.cycle_index)
    rows = np.vstack([smooth_curve(c, basis) for c in ordered])
    label = process or ordered[0].process.value
    logger.debug(f"Smoothed {len(ordered)} {label} curves on K={basis.dimension}")
    return FunctionalSample(basis, rows, tuple(c.cycle_index for c in ordered), label)
