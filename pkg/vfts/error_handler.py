"""
Standardized error handling for vfts.
Every failure is a VftsError subclass; the CLI renders them in one structured shape.
"""

from typing import Any, Dict, Optional


class VftsError(Exception):
    """Root of all vfts errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


# Ingestion
class IngestError(VftsError):
    pass


class MalformedRow(IngestError):
    pass


class NonPositiveCurrent(IngestError):
    pass


class DuplicateVoltage(IngestError):
    pass


class NoSwitchPoint(IngestError):
    pass


class ZeroSwitchVoltage(IngestError):
    pass


class InvalidCurve(IngestError):
    pass


# Basis and smoothing
class BasisError(VftsError):
    pass


class DimensionTooSmall(BasisError):
    pass


class ArgumentOutOfDomain(BasisError):
    pass


class RankDeficientDesign(BasisError):
    pass


# Screening
class ScreenError(VftsError):
    pass


class DegenerateScores(ScreenError):
    """All score pairs coincide. The flag-free report travels with the error."""

    def __init__(self, message: str, report: Any = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details)
        self.report = report


# FPCA
class FpcaError(VftsError):
    pass


class SingularGram(FpcaError):
    pass


class CycleMisalignment(FpcaError):
    pass


class AllZeroVariance(FpcaError):
    pass


class QOutOfRange(FpcaError):
    pass


# VAR, causality, diagnostics
class ModelError(VftsError):
    pass


class InsufficientData(ModelError):
    pass


class CollinearRegressors(ModelError):
    pass


class ShortHistory(ModelError):
    pass


class LabelMismatch(ModelError):
    pass


class SameVariable(ModelError):
    pass


class OverlappingRoles(ModelError):
    pass


class InvalidLagRequest(ModelError):
    pass


class NonStationaryNoise(ModelError):
    pass


class SingularCovariance(ModelError):
    pass


# Forecasting
class ForecastError(VftsError):
    pass


class HoldoutTooLarge(ForecastError):
    pass


class GridMismatch(ForecastError):
    pass


class LagOutOfRange(ForecastError):
    pass


# Synthetic data
class UnstableDynamics(VftsError):
    pass


# CLI, config and artifacts
class UnknownSubcommand(VftsError):
    pass


class ConfigError(VftsError):
    pass


class ArtifactError(VftsError):
    pass


def error_payload(exc: Exception, stage: str = None) -> Dict[str, Any]:
    """
    Create the structured error document written to stderr.

    Args:
        exc: The raised exception
        stage: Pipeline stage name, prefixed to the message (optional)

    Returns:
        Dict with ok=False, error message, error type and details
    """
    message = exc.message if isinstance(exc, VftsError) else f"Internal error: {exc}"
    if stage:
        message = f"{stage}: {message}"

    response = {
        "ok": False,
        "error": message,
        "type": type(exc).__name__
    }

    details = getattr(exc, "details", None)
    if details:
        response["details"] = details

    return response
