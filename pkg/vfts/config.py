"""
Configuration constants for the vfts pipeline.
Centralizes every default so the CLI, the library and the tests agree.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from jsonschema import Draft202012Validator

from vfts.error_handler import ConfigError

# Ingestion
DEFAULT_JUMP_FRACTION = 0.20

# Smoothing
DEFAULT_BASIS_DIMENSION = 20
SPLINE_ORDER = 4
GAUSS_NODES_PER_SPAN = 4

# Screening
DEFAULT_FENCE_FACTOR = 2.58
MIN_SCREEN_CURVES = 10

# Component selection and VAR
DEFAULT_VARIANCE_THRESHOLD = 0.95
DEFAULT_P_MAX = 10
DEFAULT_PRUNE_THRESHOLD = 1.96
MAX_PRUNE_ITERATIONS = 20

# Causality
DEFAULT_ALPHA = 0.05
DEFAULT_CAUSE_LAGS = 1
TRANSFER_MAX_ITERATIONS = 50
TRANSFER_TOLERANCE = 1e-8
DEFAULT_NOISE_AR_ORDER = 1

# Diagnostics
DEFAULT_MAX_LAG = 20
ADEQUACY_LAGS = 5
# more significant CCM lags than this over the whole range reject the model
ADEQUACY_MAX_SIGNIFICANT = 2

# Forecasting
DEFAULT_HOLDOUT = 10
DEFAULT_EVAL_POINTS = 201
APPROACHES = ("univariate", "multivariate", "both")
DEFAULT_APPROACH = "both"
FORECAST_MODES = ("one_step", "iterated")
DEFAULT_FORECAST_MODE = "one_step"

# Synthetic data
DEFAULT_SEED = 0
SYNTH_BURN_IN = 200
DEFAULT_SYNTH_CYCLES = 200
SYNTH_PERSISTENCE = 0.6
DEFAULT_OUTLIER_MAGNITUDE = 10.0

# Output
DEFAULT_OUT_DIR = "vfts_out"
VARIANCE_TABLE_COMPONENTS = 6

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "schema"
CONFIG_SCHEMA_PATH = SCHEMA_DIR / "pipeline_config.schema.json"


# Environment Variables
def get_log_level() -> str:
    """Get log level from environment or use INFO."""
    return os.environ.get("VFTS_LOG_LEVEL", "INFO").upper()


def use_json_logs() -> bool:
    """Structured JSON logs when VFTS_LOG_FORMAT=json."""
    return os.getenv("VFTS_LOG_FORMAT", "").lower() == "json"


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline. Defaults trace to the constants above."""
    inputs: List[str] = field(default_factory=list)
    jump_fraction: float = DEFAULT_JUMP_FRACTION
    basis_dimension: int = DEFAULT_BASIS_DIMENSION
    fence_factor: float = DEFAULT_FENCE_FACTOR
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    holdout: int = DEFAULT_HOLDOUT
    p_max: int = DEFAULT_P_MAX
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD
    alpha: float = DEFAULT_ALPHA
    approach: str = DEFAULT_APPROACH
    eval_points: int = DEFAULT_EVAL_POINTS
    forecast_mode: str = DEFAULT_FORECAST_MODE
    max_lag: int = DEFAULT_MAX_LAG
    seed: int = DEFAULT_SEED

    def merged(self, overrides: Optional[Dict[str, Any]]) -> "PipelineConfig":
        """Apply overrides (CLI flags) on top of this config; None values are ignored."""
        updates = {k: v for k, v in (overrides or {}).items() if v is not None}
        if not updates:
            return self
        candidate = {**self.to_dict(), **updates}
        _validate(candidate, source="overrides")
        return replace(self, **updates)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def config_keys() -> List[str]:
    return [f.name for f in fields(PipelineConfig)]


def _validate(document: Dict[str, Any], source: str) -> None:
    schema = json.loads(CONFIG_SCHEMA_PATH.read_text())
    validator = Draft202012Validator(schema)
    violations = []
    for e in validator.iter_errors(document):
        path = ".".join(map(str, e.path)) or "$"
        violations.append({"path": path, "message": e.message})
    if violations:
        raise ConfigError(f"Invalid configuration in {source}", {"violations": violations})


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Load a flat JSON config document.

    Args:
        path: Config file path; None gives the defaults

    Returns:
        Validated PipelineConfig
    """
    if path is None:
        return PipelineConfig()
    try:
        document = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file '{path}' not found")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file '{path}' is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"Config file '{path}' must hold a JSON object")
    _validate(document, source=str(path))
    return PipelineConfig(**document)
