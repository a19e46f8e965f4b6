"""
Synthetic cycle generator with known ground truth.

Scores follow a stationary VAR; curves are a logistic-ramp mean plus
orthonormal Fourier eigenfunctions weighted by the scores; every curve is
sampled on a jittered grid, perturbed in log-current space, and closed by a
synthetic switch jump that the ingest detector recovers.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg

from vfts.artifacts import write_json
from vfts.basis import BasisSpec, FunctionalSample, smooth_sample
from vfts.config import DEFAULT_JUMP_FRACTION, DEFAULT_OUTLIER_MAGNITUDE, DEFAULT_SEED, SYNTH_BURN_IN
from vfts.error_handler import UnstableDynamics
from vfts.ingest import Process, RawCycle, register_cycles, write_cycles_csv
from vfts.var_engine import companion_spectral_radius

logger = logging.getLogger(__name__)

# post-switch current multipliers, far beyond any jump fraction below 1
RESET_DROP = 0.05
SET_RISE = 20.0
POST_SWITCH_SAMPLES = 3


def fourier_function(index: int, t: np.ndarray) -> np.ndarray:
    """Orthonormal family on [0, 1]: 1, sqrt2 cos(2 pi t), sqrt2 sin(2 pi t), sqrt2 cos(4 pi t), ..."""
    t = np.asarray(t, dtype=float)
    if index == 0:
        return np.ones_like(t)
    frequency = (index + 1) // 2
    wave = np.cos if index % 2 == 1 else np.sin
    return np.sqrt(2.0) * wave(2 * np.pi * frequency * t)


@dataclass(frozen=True)
class ProcessSpec:
    """One functional variable: mean ramp, spectrum and sampling."""
    name: str = "reset"
    eigenvalues: Tuple[float, ...] = (0.05, 0.02, 0.01)
    eigenfunctions: Optional[Tuple[int, ...]] = None
    n_points: int = 200
    noise_sd: float = 0.01
    mean_level: float = -9.0
    mean_rise: float = 3.0
    mean_steepness: float = 6.0
    switch_voltage: float = 0.5
    switch_voltage_sd: float = 0.02

    @property
    def family(self) -> Tuple[int, ...]:
        return self.eigenfunctions or tuple(range(len(self.eigenvalues)))

    def mean(self, t: np.ndarray) -> np.ndarray:
        return self.mean_level + self.mean_rise / (1.0 + np.exp(-self.mean_steepness * (np.asarray(t) - 0.5)))


def default_processes() -> Tuple[ProcessSpec, ProcessSpec]:
    return (
        ProcessSpec(name="reset"),
        ProcessSpec(name="set", eigenvalues=(0.06, 0.03, 0.015, 0.008), mean_level=-11.0,
                    mean_rise=2.5, mean_steepness=8.0, switch_voltage=1.0, switch_voltage_sd=0.04),
    )


@dataclass(frozen=True)
class SynthConfig:
    """
    var_coefficients act on the unit-variance latent scores of all processes
    stacked in order; they are rescaled to the configured eigenvalues.
    """
    n_cycles: int = 200
    processes: Tuple[ProcessSpec, ...] = field(default_factory=default_processes)
    var_coefficients: Optional[np.ndarray] = None
    innovation_covariance: Optional[np.ndarray] = None
    outlier_count: int = 0
    outlier_magnitude: float = DEFAULT_OUTLIER_MAGNITUDE
    seed: int = DEFAULT_SEED
    burn_in: int = SYNTH_BURN_IN
    jump_fraction: float = DEFAULT_JUMP_FRACTION

    @property
    def n_scores(self) -> int:
        return sum(len(p.eigenvalues) for p in self.processes)

    def coefficients(self) -> np.ndarray:
        if self.var_coefficients is None:
            return np.zeros((0, self.n_scores, self.n_scores))
        return np.asarray(self.var_coefficients, dtype=float).reshape(-1, self.n_scores, self.n_scores)

    def innovations(self) -> np.ndarray:
        if self.innovation_covariance is None:
            return np.eye(self.n_scores)
        return np.asarray(self.innovation_covariance, dtype=float)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Everything the generator knows: scores, dynamics and curve ingredients."""
    processes: Tuple[ProcessSpec, ...]
    scores: np.ndarray
    var_coefficients: np.ndarray
    innovation_covariance: np.ndarray
    switch_voltages: Dict[str, np.ndarray]
    outlier_cycles: Tuple[int, ...]
    score_labels: Tuple[str, ...]

    def process_scores(self, name: str) -> np.ndarray:
        offset = 0
        for spec in self.processes:
            width = len(spec.eigenvalues)
            if spec.name == name:
                return self.scores[:, offset:offset + width]
            offset += width
        raise KeyError(name)

    def spec(self, name: str) -> ProcessSpec:
        return next(p for p in self.processes if p.name == name)

    def to_dict(self) -> dict:
        return {
            "processes": [asdict(p) for p in self.processes],
            "score_labels": list(self.score_labels),
            "scores": self.scores.tolist(),
            "var_coefficients": self.var_coefficients.tolist(),
            "innovation_covariance": self.innovation_covariance.tolist(),
            "switch_voltages": {k: v.tolist() for k, v in self.switch_voltages.items()},
            "outlier_cycles": list(self.outlier_cycles),
        }


@dataclass(frozen=True, eq=False)
class SynthOutput:
    cycles: Dict[str, List[RawCycle]]
    truth: GroundTruth


def simulate_var(coefficients: np.ndarray, innovation_covariance: np.ndarray, n: int,
                 rng: np.random.Generator, burn_in: int = SYNTH_BURN_IN) -> np.ndarray:
    """n draws of a zero-mean Gaussian VAR after discarding burn_in steps."""
    coefficients = np.asarray(coefficients, dtype=float)
    q = innovation_covariance.shape[0]
    p = coefficients.shape[0]
    if companion_spectral_radius(coefficients) >= 1:
        raise UnstableDynamics("Score VAR is not stationary (companion spectral radius >= 1)")
    total = n + burn_in + p
    shocks = rng.multivariate_normal(np.zeros(q), innovation_covariance, size=total, method="cholesky")
    values = np.zeros((total, q))
    for i in range(p, total):
        values[i] = shocks[i]
        for k in range(1, p + 1):
            values[i] += coefficients[k - 1] @ values[i - k]
    return values[total - n:]


def stationary_covariance(coefficients: np.ndarray, innovation_covariance: np.ndarray) -> np.ndarray:
    """Lag-0 covariance of a stable VAR via the companion-form Lyapunov equation."""
    p = coefficients.shape[0]
    q = innovation_covariance.shape[0]
    if p == 0:
        return innovation_covariance.copy()
    companion = np.zeros((p * q, p * q))
    companion[:q] = np.hstack(list(coefficients))
    companion[q:, :-q] = np.eye((p - 1) * q)
    shock = np.zeros((p * q, p * q))
    shock[:q, :q] = innovation_covariance
    return linalg.solve_discrete_lyapunov(companion, shock)[:q, :q]


def _score_labels(processes: Sequence[ProcessSpec]) -> Tuple[str, ...]:
    return tuple(f"{p.name[0].upper()}PC{j + 1}" for p in processes for j in range(len(p.eigenvalues)))


def _jittered_grid(n_points: int, rng: np.random.Generator) -> np.ndarray:
    base = np.arange(1, n_points + 1) / n_points
    jitter = rng.uniform(-0.3, 0.3, size=n_points) / n_points
    jitter[-1] = 0.0
    return base + jitter


def _curve_values(spec: ProcessSpec, scores: np.ndarray, t: np.ndarray) -> np.ndarray:
    values = spec.mean(t)
    for score, index in zip(scores, spec.family):
        values = values + score * fourier_function(index, t)
    return values


def _emit_cycle(cycle_index: int, spec: ProcessSpec, process: Process, scores: np.ndarray,
                switch_voltage: float, rng: np.random.Generator, jump_fraction: float) -> RawCycle:
    t = _jittered_grid(spec.n_points, rng)
    log_current = _curve_values(spec, scores, t) + rng.normal(0.0, spec.noise_sd, size=t.size)
    currents = np.exp(log_current)
    voltages = t * switch_voltage

    step = switch_voltage / spec.n_points
    tail_v = switch_voltage + step * np.arange(1, POST_SWITCH_SAMPLES + 1)
    factor = SET_RISE if process is Process.SET else RESET_DROP
    tail_i = currents[-1] * factor ** np.arange(1, POST_SWITCH_SAMPLES + 1)

    # the detector must not fire before the synthetic jump
    if process is Process.SET:
        change = (currents[1:] - currents[:-1]) / currents[:-1]
    else:
        change = (currents[:-1] - currents[1:]) / currents[:-1]
    if np.any(change > jump_fraction):
        raise UnstableDynamics(
            f"Cycle {cycle_index}/{process.value} jumps before its switch point; raise n_points or lower the spectrum",
            {"cycle": cycle_index, "process": process.value},
        )
    return RawCycle(cycle_index, process, np.concatenate([voltages, tail_v]), np.concatenate([currents, tail_i]))


def generate(config: SynthConfig) -> SynthOutput:
    """Simulate scores, build curves, emit raw cycles with ground truth."""
    rng = np.random.default_rng(config.seed)
    coefficients = config.coefficients()
    innovations = config.innovations()
    if companion_spectral_radius(coefficients) >= 1:
        raise UnstableDynamics("Score VAR is not stationary (companion spectral radius >= 1)")

    latent = simulate_var(coefficients, innovations, config.n_cycles, rng, config.burn_in)
    gamma = np.diag(stationary_covariance(coefficients, innovations))
    eigenvalues = np.concatenate([np.asarray(p.eigenvalues, dtype=float) for p in config.processes])
    scale = np.sqrt(eigenvalues / gamma)
    scores = latent * scale

    outliers: Tuple[int, ...] = ()
    if config.outlier_count:
        outliers = tuple(sorted(rng.choice(config.n_cycles, size=config.outlier_count, replace=False).tolist()))
        # the first two components of every process carry the displacement
        leading = np.zeros(scores.shape[1], dtype=bool)
        offset = 0
        for spec in config.processes:
            leading[offset:offset + min(2, len(spec.eigenvalues))] = True
            offset += len(spec.eigenvalues)
        signs = rng.choice([-1.0, 1.0], size=(config.outlier_count, scores.shape[1]))
        displaced = config.outlier_magnitude * np.sqrt(eigenvalues) * signs
        rows = list(outliers)
        scores[rows] = np.where(leading, displaced, scores[rows])

    cycles: Dict[str, List[RawCycle]] = {}
    switch_voltages: Dict[str, np.ndarray] = {}
    offset = 0
    for spec in config.processes:
        width = len(spec.eigenvalues)
        process = Process(spec.name)
        voltages = spec.switch_voltage + spec.switch_voltage_sd * rng.standard_normal(config.n_cycles)
        voltages = np.clip(voltages, 0.1 * spec.switch_voltage, None)
        switch_voltages[spec.name] = voltages
        cycles[spec.name] = [
            _emit_cycle(i, spec, process, scores[i, offset:offset + width], voltages[i], rng, config.jump_fraction)
            for i in range(config.n_cycles)
        ]
        offset += width

    # a zero eigenvalue silences its score, so its couplings are zero too
    ratio = np.divide(scale[:, None], scale[None, :], out=np.zeros((scale.size, scale.size)), where=scale[None, :] > 0)
    truth = GroundTruth(
        processes=tuple(config.processes),
        scores=scores,
        var_coefficients=coefficients * ratio[None, :, :],
        innovation_covariance=innovations * np.outer(scale, scale),
        switch_voltages=switch_voltages,
        outlier_cycles=outliers,
        score_labels=_score_labels(config.processes),
    )
    logger.info(f"Generated {config.n_cycles} cycles for {[p.name for p in config.processes]}")
    return SynthOutput(cycles, truth)


def dense_curves(truth: GroundTruth, process: str, grid: np.ndarray) -> np.ndarray:
    """Noiseless true curves of one process on a grid, shape (n, len(grid))."""
    spec = truth.spec(process)
    scores = truth.process_scores(process)
    basis_values = np.column_stack([fourier_function(j, grid) for j in spec.family])
    return spec.mean(grid)[None, :] + scores @ basis_values.T


def functional_samples(output: SynthOutput, basis: BasisSpec,
                       jump_fraction: float = DEFAULT_JUMP_FRACTION) -> List[FunctionalSample]:
    """Register and smooth the generated cycles without a file round trip."""
    samples = []
    for name, cycles in output.cycles.items():
        grouped, _ = register_cycles(cycles, jump_fraction)
        samples.append(smooth_sample(grouped[Process(name)], basis, name))
    return samples


def write_output(output: SynthOutput, out_dir: Path) -> List[Path]:
    """One cycle CSV per process plus ground_truth.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, cycles in output.cycles.items():
        path = out_dir / f"{name}_cycles.csv"
        write_cycles_csv(cycles, path)
        written.append(path)
    truth_path = out_dir / "ground_truth.json"
    written.append(write_json(output.truth.to_dict(), truth_path))
    return written


def grid_fpca_oracle(curves: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Brute-force FPCA of curves on a dense uniform grid covering [0, 1].

    Trapezoid weights; covariance divisor n.

    Returns:
        (eigenvalues, eigenfunctions on the grid as columns, scores)
    """
    n, g = curves.shape
    if g < 501:
        raise ValueError(f"Grid oracle needs at least 501 points, got {g}")
    weights = np.full(g, delta)
    weights[[0, -1]] = delta / 2
    root = np.sqrt(weights)
    centered = curves - curves.mean(axis=0)
    covariance = centered.T @ centered / n
    values, vectors = linalg.eigh(root[:, None] * covariance * root[None, :])
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    functions = vectors[:, order] / root[:, None]
    scores = centered @ (functions * weights[:, None])
    return values, functions, scores


def l2_inner(f: np.ndarray, g: np.ndarray, grid: np.ndarray) -> float:
    """Trapezoidal inner product of two grid functions."""
    return float(integrate.trapezoid(f * g, grid))
