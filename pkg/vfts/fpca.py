"""
Univariate and multivariate functional PCA of basis-represented curves.

Both reduce exactly to the symmetric eigenproblem of W^1/2 S W^1/2, where S
is the coefficient covariance (divisor n) and W the (block-diagonal) Gram
matrix of the basis.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from vfts.basis import BasisSpec, FunctionalSample, design_matrix, gram_matrix
from vfts.error_handler import AllZeroVariance, CycleMisalignment, FpcaError, QOutOfRange, SingularGram

logger = logging.getLogger(__name__)


class PcaKind(Enum):
    UNIVARIATE = "univariate"
    MULTIVARIATE = "multivariate"


@dataclass(frozen=True)
class PcaBlock:
    """One functional variable inside the stacked coefficient layout."""
    label: str
    basis: BasisSpec
    offset: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.basis.dimension)


@dataclass(frozen=True, eq=False)
class PcaModel:
    """
    Fitted (M)FPCA.

    eigenfunction_coefficients[:, j] holds the stacked basis coefficients of
    eigenfunction j; scores[i, j] is the score of cycle cycle_indices[i].
    """
    kind: PcaKind
    blocks: Tuple[PcaBlock, ...]
    mean_coefficients: np.ndarray
    eigenvalues: np.ndarray
    eigenfunction_coefficients: np.ndarray
    scores: np.ndarray
    total_variance: float
    cycle_indices: Tuple[int, ...]

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    @property
    def labels(self) -> List[str]:
        return [b.label for b in self.blocks]

    def gram(self) -> np.ndarray:
        return linalg.block_diag(*[gram_matrix(b.basis) for b in self.blocks])


def _symmetric_roots(gram: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = linalg.eigh(gram)
    if values.min() <= 0:
        raise SingularGram("Gram matrix is not positive definite", {"min_eigenvalue": float(values.min())})
    root = (vectors * np.sqrt(values)) @ vectors.T
    inverse_root = (vectors / np.sqrt(values)) @ vectors.T
    return root, inverse_root


def _apply_sign_convention(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive; argmax picks the lowest index on ties
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _fit(coefficients: np.ndarray, gram: np.ndarray):
    n = coefficients.shape[0]
    mean = coefficients.mean(axis=0)
    centered = coefficients - mean
    covariance = centered.T @ centered / n

    root, inverse_root = _symmetric_roots(gram)
    operator = root @ covariance @ root
    operator = (operator + operator.T) / 2

    values, vectors = linalg.eigh(operator)
    order = np.argsort(values, kind="stable")[::-1]
    values = np.clip(values[order], 0.0, None)
    eigenfunctions = _apply_sign_convention(inverse_root @ vectors[:, order])
    scores = centered @ gram @ eigenfunctions
    total = float(np.trace(operator))
    return mean, values, eigenfunctions, scores, total


def fpca_univariate(sample: FunctionalSample) -> PcaModel:
    """FPCA of one functional variable; covariance divisor n."""
    if sample.n < 2:
        raise FpcaError(f"FPCA needs at least 2 curves, got {sample.n}")
    gram = gram_matrix(sample.basis)
    mean, values, eigenfunctions, scores, total = _fit(sample.coefficients, gram)
    logger.debug(f"FPCA {sample.process}: n={sample.n}, leading eigenvalue {values[0]:.6g}")
    return PcaModel(
        kind=PcaKind.UNIVARIATE,
        blocks=(PcaBlock(sample.process, sample.basis, 0),),
        mean_coefficients=mean,
        eigenvalues=values,
        eigenfunction_coefficients=eigenfunctions,
        scores=scores,
        total_variance=total,
        cycle_indices=sample.cycle_indices,
    )


def fpca_multivariate(samples: Sequence[FunctionalSample]) -> PcaModel:
    """Joint FPCA of H functional variables observed on the same cycles."""
    if not samples:
        raise FpcaError("Multivariate FPCA needs at least one sample")
    reference = samples[0].cycle_indices
    for s in samples[1:]:
        if s.cycle_indices != reference:
            raise CycleMisalignment(
                f"Sample '{s.process}' is not aligned with '{samples[0].process}'",
                {"n": [x.n for x in samples]},
            )
    if samples[0].n < 2:
        raise FpcaError(f"FPCA needs at least 2 curves, got {samples[0].n}")

    blocks, offset = [], 0
    for s in samples:
        blocks.append(PcaBlock(s.process, s.basis, offset))
        offset += s.basis.dimension
    stacked = np.hstack([s.coefficients for s in samples])
    gram = linalg.block_diag(*[gram_matrix(s.basis) for s in samples])

    mean, values, eigenfunctions, scores, total = _fit(stacked, gram)
    logger.debug(f"MFPCA over {[s.process for s in samples]}: n={samples[0].n}, P={offset}")
    return PcaModel(
        kind=PcaKind.MULTIVARIATE,
        blocks=tuple(blocks),
        mean_coefficients=mean,
        eigenvalues=values,
        eigenfunction_coefficients=eigenfunctions,
        scores=scores,
        total_variance=total,
        cycle_indices=reference,
    )


def choose_q(eigenvalues: Sequence[float], threshold: float) -> int:
    """Smallest q whose leading eigenvalues explain at least `threshold` of the variance."""
    if not 0 < threshold < 1:
        raise ValueError(f"Variance threshold must lie in (0, 1), got {threshold}")
    values = np.asarray(eigenvalues, dtype=float)
    total = values.sum()
    if values.size == 0 or total <= 0:
        raise AllZeroVariance("No positive eigenvalue to explain")
    explained = np.cumsum(values) / total
    # rounding noise must not push an exact hit below the threshold
    return int(np.searchsorted(explained, threshold - 1e-12, side="left")) + 1


def variance_table(model: PcaModel, n_components: int = 6) -> np.ndarray:
    """Cumulative explained variability (%) of the first components."""
    if model.total_variance <= 0:
        raise AllZeroVariance("No variability to explain")
    k = min(n_components, model.n_components)
    return 100.0 * np.cumsum(model.eigenvalues[:k]) / model.eigenvalues.sum()


def _split(model: PcaModel, coefficients: np.ndarray) -> List[FunctionalSample]:
    return [
        FunctionalSample(block.basis, coefficients[:, block.slice], model.cycle_indices, block.label)
        for block in model.blocks
    ]


def reconstruct(model: PcaModel, q: int) -> Union[FunctionalSample, List[FunctionalSample]]:
    """Truncated Karhunen-Loeve reconstruction with the first q components."""
    if not 0 <= q <= model.n_components:
        raise QOutOfRange(f"q={q} outside 0..{model.n_components}")
    coefficients = model.mean_coefficients + model.scores[:, :q] @ model.eigenfunction_coefficients[:, :q].T
    samples = _split(model, coefficients)
    return samples[0] if model.kind is PcaKind.UNIVARIATE else samples


def project(model: PcaModel, samples: Union[FunctionalSample, Sequence[FunctionalSample]]) -> np.ndarray:
    """Scores of new curves on the fitted eigenbasis, shape (n_new, J)."""
    if isinstance(samples, FunctionalSample):
        samples = [samples]
    if len(samples) != len(model.blocks):
        raise CycleMisalignment(f"Expected {len(model.blocks)} samples, got {len(samples)}")
    for block, s in zip(model.blocks, samples):
        if s.basis != block.basis:
            raise FpcaError(f"Sample '{s.process}' uses a different basis than block '{block.label}'")
        if s.cycle_indices != samples[0].cycle_indices:
            raise CycleMisalignment(f"Sample '{s.process}' is not aligned with '{samples[0].process}'")
    stacked = np.hstack([s.coefficients for s in samples])
    return (stacked - model.mean_coefficients) @ model.gram() @ model.eigenfunction_coefficients


def eigenfunction_values(model: PcaModel, grid: Sequence[float], q: int = None) -> List[np.ndarray]:
    """Per block, the first q eigenfunctions on the grid, each of shape (len(grid), q)."""
    q = model.n_components if q is None else q
    if not 0 <= q <= model.n_components:
        raise QOutOfRange(f"q={q} outside 0..{model.n_components}")
    return [
        design_matrix(block.basis, grid) @ model.eigenfunction_coefficients[block.slice, :q]
        for block in model.blocks
    ]


def mean_values(model: PcaModel, grid: Sequence[float]) -> List[np.ndarray]:
    """Per block, the mean function on the grid."""
    return [design_matrix(block.basis, grid) @ model.mean_coefficients[block.slice] for block in model.blocks]
