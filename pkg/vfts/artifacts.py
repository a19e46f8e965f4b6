"""
JSON artifacts passed between pipeline stages.

Every document carries a `kind` and is validated against its schema in
schema/ on load. Writes are sorted and indented so identical objects give
identical bytes.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from jsonschema import Draft202012Validator

from vfts.basis import BasisSpec, FunctionalSample
from vfts.causality import CausalityReport, TransferFunctionModel
from vfts.config import SCHEMA_DIR
from vfts.diagnostics import WhitenessReport
from vfts.error_handler import ArtifactError
from vfts.forecast import Approach, ForecastBundle
from vfts.fpca import PcaBlock, PcaKind, PcaModel
from vfts.ingest import Process, RegisteredCurve
from vfts.screen import OutlierReport
from vfts.structure import StructuredModel
from vfts.var_engine import ScoreSeries, VarModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SCHEMAS = {
    "registered_curves": "registered_curves.schema.json",
    "functional_samples": "functional_samples.schema.json",
    "outlier_reports": "outlier_reports.schema.json",
    "forecast_bundle": "forecast_bundle.schema.json",
    "causality_report": "causality_report.schema.json",
    "whiteness_report": "whiteness_report.schema.json",
    "structured_model": "structured_model.schema.json",
}


def _clean(value: Any) -> Any:
    # NaN and inf are not JSON; they are written as null
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return None if not math.isfinite(value) else float(value)
    return value


def _array(values) -> np.ndarray:
    # null entries come back as NaN
    return None if values is None else np.array(values, dtype=float)


def validate_document(document: Dict[str, Any], kind: str) -> List[Dict[str, str]]:
    """Schema violations of a document, each as {path, message}."""
    schema = json.loads((SCHEMA_DIR / SCHEMAS[kind]).read_text())
    validator = Draft202012Validator(schema)
    violations = []
    for e in validator.iter_errors(document):
        path = ".".join(map(str, e.path)) or "$"
        violations.append({"path": path, "message": e.message})
    return violations


def write_json(document: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(_clean(document), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def read_json(path: PathLike, kind: str) -> Dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ArtifactError(f"Artifact '{path}' not found")
    except json.JSONDecodeError as e:
        raise ArtifactError(f"Artifact '{path}' is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ArtifactError(f"Artifact '{path}' must hold a JSON object")
    violations = validate_document(document, kind)
    if violations:
        raise ArtifactError(f"Artifact '{path}' is not a valid {kind} document", {"violations": violations})
    return document


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    return path


# Registered curves
def save_registered_curves(curves: Sequence[RegisteredCurve], path: PathLike,
                           jump_fraction: float, dropped: Sequence[int] = ()) -> Path:
    document = {
        "kind": "registered_curves",
        "jump_fraction": jump_fraction,
        "dropped_cycles": list(dropped),
        "curves": [
            {
                "cycle": c.cycle_index,
                "process": c.process.value,
                "switch_voltage": c.switch_voltage,
                "grid": c.grid,
                "values": c.values,
            }
            for c in sorted(curves, key=lambda c: (c.process.rank, c.cycle_index))
        ],
    }
    return write_json(document, path)


def load_registered_curves(path: PathLike) -> Dict[Process, List[RegisteredCurve]]:
    document = read_json(path, "registered_curves")
    grouped: Dict[Process, List[RegisteredCurve]] = {}
    for c in document["curves"]:
        process = Process(c["process"])
        curve = RegisteredCurve(c["cycle"], process, c["switch_voltage"], _array(c["grid"]), _array(c["values"]))
        grouped.setdefault(process, []).append(curve)
    return grouped


# Functional samples
def _basis_to_dict(basis: BasisSpec) -> Dict[str, Any]:
    return {"K": basis.dimension, "order": basis.order, "knots": basis.knots}


def _basis_from_dict(document: Dict[str, Any]) -> BasisSpec:
    return BasisSpec(document["K"], _array(document["knots"]), document["order"])


def save_samples(samples: Sequence[FunctionalSample], path: PathLike, excluded: Sequence[int] = ()) -> Path:
    document = {
        "kind": "functional_samples",
        "excluded_cycles": list(excluded),
        "samples": [
            {
                "process": s.process,
                "basis": _basis_to_dict(s.basis),
                "cycle_indices": list(s.cycle_indices),
                "coefficients": s.coefficients,
            }
            for s in samples
        ],
    }
    return write_json(document, path)


def load_samples(path: PathLike) -> List[FunctionalSample]:
    document = read_json(path, "functional_samples")
    return [
        FunctionalSample(_basis_from_dict(s["basis"]), _array(s["coefficients"]), tuple(s["cycle_indices"]),
                         s["process"])
        for s in document["samples"]
    ]


# Outlier reports
def save_outlier_reports(flagged: Sequence[int], reports: Dict[str, OutlierReport], path: PathLike) -> Path:
    document = {
        "kind": "outlier_reports",
        "flagged_cycles": list(flagged),
        "reports": [
            {
                "process": name,
                "fence_factor": r.fence_factor,
                "cycle_indices": list(r.cycle_indices),
                "flags": r.flags,
                "depths": r.depths,
                "scores2d": r.scores2d,
            }
            for name, r in reports.items()
        ],
    }
    return write_json(document, path)


def load_outlier_reports(path: PathLike) -> Tuple[List[int], Dict[str, OutlierReport]]:
    document = read_json(path, "outlier_reports")
    reports = {
        r["process"]: OutlierReport(
            flags=np.array(r["flags"], dtype=bool),
            depths=_array(r["depths"]),
            scores2d=_array(r["scores2d"]).reshape(-1, 2),
            fence_factor=r["fence_factor"],
            cycle_indices=tuple(r["cycle_indices"]),
            process=r["process"],
        )
        for r in document["reports"]
    }
    return list(document["flagged_cycles"]), reports


# Forecast bundle
def _pca_to_dict(model: PcaModel) -> Dict[str, Any]:
    return {
        "kind": model.kind.value,
        "blocks": [{"label": b.label, "basis": _basis_to_dict(b.basis), "offset": b.offset} for b in model.blocks],
        "mean_coefficients": model.mean_coefficients,
        "eigenvalues": model.eigenvalues,
        # one list per eigenfunction (column-major)
        "eigenfunction_coefficients": model.eigenfunction_coefficients.T,
        "scores": model.scores,
        "total_variance": model.total_variance,
        "cycle_indices": list(model.cycle_indices),
    }


def _pca_from_dict(document: Dict[str, Any]) -> PcaModel:
    blocks = tuple(PcaBlock(b["label"], _basis_from_dict(b["basis"]), b["offset"]) for b in document["blocks"])
    width = sum(b.basis.dimension for b in blocks)
    n = len(document["cycle_indices"])
    return PcaModel(
        kind=PcaKind(document["kind"]),
        blocks=blocks,
        mean_coefficients=_array(document["mean_coefficients"]),
        eigenvalues=_array(document["eigenvalues"]),
        eigenfunction_coefficients=_array(document["eigenfunction_coefficients"]).reshape(-1, width).T,
        scores=_array(document["scores"]).reshape(n, -1),
        total_variance=document["total_variance"],
        cycle_indices=tuple(document["cycle_indices"]),
    )


def _var_to_dict(model: VarModel) -> Dict[str, Any]:
    return {
        "p": model.order,
        "labels": list(model.labels),
        "omega": model.coefficients,
        "mask": model.mask,
        "sigma": model.residual_covariance,
        "n_effective": model.n_effective,
        "std_errors": model.std_errors,
        "intercept": model.intercept,
        "start": model.start,
    }


def _var_from_dict(document: Dict[str, Any]) -> VarModel:
    p, q = document["p"], len(document["labels"])
    return VarModel(
        order=p,
        coefficients=_array(document["omega"]).reshape(p, q, q),
        mask=np.array(document["mask"], dtype=bool).reshape(p, q, q),
        residual_covariance=_array(document["sigma"]).reshape(q, q),
        n_effective=document["n_effective"],
        labels=tuple(document["labels"]),
        std_errors=_array(document["std_errors"]).reshape(p, q, q),
        intercept=_array(document["intercept"]),
        start=document["start"],
    )


def bundle_to_dict(bundle: ForecastBundle) -> Dict[str, Any]:
    return {
        "kind": "forecast_bundle",
        "approach": bundle.approach.value,
        "pcas": [_pca_to_dict(p) for p in bundle.pcas],
        "q": list(bundle.q),
        "var": _var_to_dict(bundle.var),
        "series": {"labels": list(bundle.series.labels), "values": bundle.series.values,
                   "origin": bundle.series.origin},
        "train_range": list(bundle.train_range),
    }


def save_bundle(bundle: ForecastBundle, path: PathLike) -> Path:
    return write_json(bundle_to_dict(bundle), path)


def load_bundle(path: PathLike) -> ForecastBundle:
    document = read_json(path, "forecast_bundle")
    series = document["series"]
    labels = tuple(series["labels"])
    return ForecastBundle(
        approach=Approach(document["approach"]),
        pcas=tuple(_pca_from_dict(p) for p in document["pcas"]),
        q=tuple(document["q"]),
        var=_var_from_dict(document["var"]),
        series=ScoreSeries(_array(series["values"]).reshape(-1, len(labels)), labels, series["origin"]),
        train_range=tuple(document["train_range"]),
    )


# Causality and diagnostics
def save_causality_report(report: CausalityReport, path: PathLike) -> Path:
    document = {
        "kind": "causality_report",
        "labels": list(report.labels),
        "p_values": report.p_values,
        "decisions": report.decisions,
        "lags_used": report.lags_used,
        "alpha": report.alpha,
        "mode": report.mode,
    }
    return write_json(document, path)


def load_causality_report(path: PathLike) -> CausalityReport:
    document = read_json(path, "causality_report")
    q = len(document["labels"])
    return CausalityReport(
        labels=tuple(document["labels"]),
        p_values=_array(document["p_values"]).reshape(q, q),
        decisions=np.array(document["decisions"], dtype=bool).reshape(q, q),
        lags_used=np.array(document["lags_used"], dtype=int).reshape(q, q, 2),
        alpha=document["alpha"],
        mode=document["mode"],
    )


def save_whiteness_report(report: WhitenessReport, path: PathLike) -> Path:
    document = {
        "kind": "whiteness_report",
        "max_lag": report.max_lag,
        "q": report.q,
        "fitted_order": report.fitted_order,
        "alpha": report.alpha,
        "ccm_statistics": report.ccm_statistics,
        "ccm_p_values": report.ccm_p_values,
        "portmanteau_statistics": report.portmanteau_statistics,
        "portmanteau_p_values": report.portmanteau_p_values,
        "significant_ccm_lags": list(report.significant_ccm_lags),
        "adequate_first_5": report.adequate_first_5,
        "adequate": report.adequate,
    }
    return write_json(document, path)


# Structured model
def _transfer_to_dict(model: TransferFunctionModel) -> Dict[str, Any]:
    return {
        "output_label": model.output_label,
        "input_labels": list(model.input_labels),
        "input_lags": [list(lags) for lags in model.input_lags],
        "input_coefficients": model.input_coefficients,
        "input_std_errors": model.input_std_errors,
        "noise_ar_order": model.noise_ar_order,
        "noise_ar_coefficients": model.noise_ar_coefficients,
        "intercept": model.intercept,
        "residual_variance": model.residual_variance,
        "iterations": model.iterations,
    }


def _transfer_from_dict(document: Dict[str, Any]) -> TransferFunctionModel:
    return TransferFunctionModel(
        output_label=document["output_label"],
        input_labels=tuple(document["input_labels"]),
        input_lags=tuple(tuple(lags) for lags in document["input_lags"]),
        input_coefficients=_array(document["input_coefficients"]),
        input_std_errors=_array(document["input_std_errors"]),
        noise_ar_order=document["noise_ar_order"],
        noise_ar_coefficients=_array(document["noise_ar_coefficients"]),
        intercept=document["intercept"],
        residual_variance=document["residual_variance"],
        iterations=document["iterations"],
    )


def save_structured_model(model: StructuredModel, approach: str, path: PathLike) -> Path:
    document = {
        "kind": "structured_model",
        "approach": approach,
        "alpha": model.alpha,
        "groups": {name: _var_to_dict(var) for name, var in model.group_models.items()},
        "cross_arrows": [list(arrow) for arrow in model.cross_arrows],
        "transfer_functions": [_transfer_to_dict(tf) for tf in model.transfer_functions],
    }
    return write_json(document, path)


def load_structured_model(path: PathLike) -> StructuredModel:
    document = read_json(path, "structured_model")
    return StructuredModel(
        group_models={name: _var_from_dict(var) for name, var in document["groups"].items()},
        transfer_functions=tuple(_transfer_from_dict(tf) for tf in document["transfer_functions"]),
        cross_arrows=tuple(tuple(arrow) for arrow in document["cross_arrows"]),
        alpha=document["alpha"],
    )
