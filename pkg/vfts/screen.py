"""
Functional outlier screening by the functional bagplot: Tukey halfspace
depth of the first two principal component scores, a bag of the 50% deepest
points and a fence obtained by inflating the bag about the Tukey median.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from vfts.basis import FunctionalSample
from vfts.config import DEFAULT_FENCE_FACTOR, MIN_SCREEN_CURVES
from vfts.error_handler import DegenerateScores, ScreenError
from vfts.fpca import fpca_univariate

logger = logging.getLogger(__name__)

# angular ties closer than this are treated as exact
ANGLE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class OutlierReport:
    flags: np.ndarray
    depths: np.ndarray
    scores2d: np.ndarray
    fence_factor: float
    cycle_indices: Tuple[int, ...] = ()
    process: str = ""

    @property
    def flagged_cycles(self) -> List[int]:
        return [c for c, f in zip(self.cycle_indices, self.flags) if f]


def halfspace_depth(points: np.ndarray, query: Sequence[float]) -> float:
    """
    Normalized Tukey depth of `query` within `points` (n x 2).

    Angular sweep: the least-populated closed halfplane through the query is
    the complement of the most-populated open one, and the latter is found
    among open semicircles starting at a point direction.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < 1:
        raise ScreenError("Depth needs at least one point")
    offsets = points - np.asarray(query, dtype=float)
    at_query = np.all(offsets == 0.0, axis=1)
    rest = offsets[~at_query]
    m = rest.shape[0]
    if m == 0:
        return 1.0

    angles = np.sort(np.mod(np.arctan2(rest[:, 1], rest[:, 0]), 2 * np.pi))
    wrapped = np.concatenate([angles, angles + 2 * np.pi])
    starts = np.searchsorted(wrapped, angles - ANGLE_TOLERANCE, side="left")
    ends = np.searchsorted(wrapped, angles + np.pi - ANGLE_TOLERANCE, side="left")
    open_max = int(np.max(ends - starts))
    return (int(at_query.sum()) + m - open_max) / n


def _depths(points: np.ndarray) -> np.ndarray:
    return np.array([halfspace_depth(points, p) for p in points])


def _outside_fence(points: np.ndarray, fence: np.ndarray, center: np.ndarray) -> np.ndarray:
    try:
        triangulation = Delaunay(fence)
        return triangulation.find_simplex(points) < 0
    except QhullError:
        # collinear bag: the fence is a segment
        direction = fence[-1] - fence[0]
        length = np.linalg.norm(direction)
        if length == 0:
            return np.any(points != center, axis=1)
        unit = direction / length
        rel = points - fence[0]
        along = rel @ unit
        across = np.abs(rel @ np.array([-unit[1], unit[0]]))
        return (across > 1e-9 * length) | (along < -1e-9 * length) | (along > length * (1 + 1e-9))


def bagplot_flags(scores2d: np.ndarray, fence_factor: float = DEFAULT_FENCE_FACTOR) -> Tuple[np.ndarray, np.ndarray]:
    """Flags and depths for a bivariate score cloud."""
    if fence_factor <= 1:
        raise ValueError(f"fence_factor must exceed 1, got {fence_factor}")
    n = scores2d.shape[0]
    depths = _depths(scores2d)
    order = np.argsort(-depths, kind="stable")
    center = scores2d[order[0]]
    bag = scores2d[order[:int(np.ceil(n / 2))]]

    try:
        hull = ConvexHull(bag)
        vertices = bag[hull.vertices]
    except QhullError:
        # degenerate bag: keep its two extreme points along the spread direction
        spread = bag - bag.mean(axis=0)
        axis = np.linalg.svd(spread, full_matrices=False)[2][0]
        along = spread @ axis
        vertices = bag[[int(np.argmin(along)), int(np.argmax(along))]]

    fence = center + fence_factor * (vertices - center)
    flags = _outside_fence(scores2d, fence, center)
    return flags, depths


def functional_bagplot_flags(sample: FunctionalSample, fence_factor: float = DEFAULT_FENCE_FACTOR) -> OutlierReport:
    """Screen one process: FPCA, first two scores, bagplot fence."""
    if sample.n < MIN_SCREEN_CURVES:
        raise ScreenError(f"Bagplot needs at least {MIN_SCREEN_CURVES} curves, got {sample.n}")
    model = fpca_univariate(sample)
    scores2d = model.scores[:, :2]

    if np.all(scores2d == scores2d[0]):
        report = OutlierReport(
            flags=np.zeros(sample.n, dtype=bool),
            depths=np.ones(sample.n),
            scores2d=scores2d,
            fence_factor=fence_factor,
            cycle_indices=sample.cycle_indices,
            process=sample.process,
        )
        raise DegenerateScores(f"All '{sample.process}' score pairs coincide", report=report)

    flags, depths = bagplot_flags(scores2d, fence_factor)
    if flags.all():
        raise ScreenError(f"Every '{sample.process}' curve fell outside the fence")
    logger.info(f"Bagplot flagged {int(flags.sum())} of {sample.n} {sample.process} curves")
    return OutlierReport(flags, depths, scores2d, fence_factor, sample.cycle_indices, sample.process)


def screen_cycles(samples: Sequence[FunctionalSample],
                  fence_factor: float = DEFAULT_FENCE_FACTOR) -> Tuple[List[int], Dict[str, OutlierReport]]:
    """
    Screen every process; a cycle flagged in any process is flagged for all.

    Returns:
        (sorted flagged cycle indices, report per process)
    """
    flagged, reports = set(), {}
    for sample in samples:
        try:
            report = functional_bagplot_flags(sample, fence_factor)
        except DegenerateScores as e:
            logger.warning(str(e))
            report = e.report
        reports[sample.process] = report
        flagged.update(report.flagged_cycles)
    return sorted(flagged), reports
