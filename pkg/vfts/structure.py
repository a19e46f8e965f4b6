"""
Block models read off a causality analysis.

Score components are grouped by label prefix (RPC, SPC); each group gets
its own pruned VAR, and every effect with significant causes in another
group gets a transfer-function equation for its group-VAR errors, driven
by those causes.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from vfts.causality import CausalityReport, TransferFunctionModel, fit_transfer_function
from vfts.config import DEFAULT_CAUSE_LAGS, DEFAULT_NOISE_AR_ORDER, DEFAULT_P_MAX, DEFAULT_PRUNE_THRESHOLD
from vfts.error_handler import InsufficientData, LabelMismatch, NonStationaryNoise
from vfts.var_engine import (ScoreSeries, VarModel, feasible_p_max, fit_var, prune_coefficients, residuals,
                             select_labels, select_order_aic)

logger = logging.getLogger(__name__)


def label_groups(labels: Sequence[str]) -> Dict[str, Tuple[str, ...]]:
    """Components sharing a prefix (RPC1, RPC2 -> RPC), groups in order of first appearance."""
    groups: Dict[str, List[str]] = {}
    for label in labels:
        groups.setdefault(label.rstrip("0123456789"), []).append(label)
    return {name: tuple(members) for name, members in groups.items()}


def cross_group_causes(report: CausalityReport, groups: Dict[str, Tuple[str, ...]]) -> Dict[str, List[str]]:
    """Per effect, its significant causes that belong to another group."""
    group_of = {label: name for name, members in groups.items() for label in members}
    causes: Dict[str, List[str]] = {}
    for cause, effect in report.arrows():
        if group_of[cause] != group_of[effect]:
            causes.setdefault(effect, []).append(cause)
    return causes


@dataclass(frozen=True, eq=False)
class StructuredModel:
    """
    Per-group VARs plus transfer functions on the group-VAR errors.

    The output series of every transfer function is the error of its
    label's equation in that label's group VAR.
    """
    group_models: Dict[str, VarModel]
    transfer_functions: Tuple[TransferFunctionModel, ...]
    cross_arrows: Tuple[Tuple[str, str], ...]
    alpha: float

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for model in self.group_models.values() for label in model.labels)

    @property
    def n_parameters(self) -> int:
        total = sum(model.n_parameters for model in self.group_models.values())
        return total + sum(tf.input_coefficients.size + tf.noise_ar_order for tf in self.transfer_functions)


def _group_var(series: ScoreSeries, members: Sequence[str], p_max: int, prune_threshold: float) -> VarModel:
    sub = select_labels(series, members)
    feasible = feasible_p_max(sub.n, sub.q, p_max)
    p = select_order_aic(sub, feasible)
    return prune_coefficients(sub, fit_var(sub, p), prune_threshold)


def fit_structured_model(series: ScoreSeries, report: CausalityReport,
                         p_max: int = DEFAULT_P_MAX,
                         prune_threshold: float = DEFAULT_PRUNE_THRESHOLD,
                         cause_lags: int = DEFAULT_CAUSE_LAGS,
                         noise_ar_order: int = DEFAULT_NOISE_AR_ORDER) -> StructuredModel:
    """
    Split the score VAR along the label groups and model the cross-group arrows.

    Args:
        series: Score series the report was computed for
        report: Causality decisions, usually after the partial tests
        p_max: Largest order considered for each group VAR
        prune_threshold: |t| below which group-VAR coefficients are dropped
        cause_lags: Input lags 1..cause_lags of every transfer-function input
        noise_ar_order: AR order of the transfer-function noise
    """
    if tuple(report.labels) != tuple(series.labels):
        raise LabelMismatch("Causality report labels differ from the series labels",
                            {"report": list(report.labels), "series": list(series.labels)})
    groups = label_groups(series.labels)
    if len(groups) < 2:
        raise InsufficientData("Block models need at least two score groups", {"groups": list(groups)})

    models = {}
    for name, members in groups.items():
        models[name] = _group_var(series, members, p_max, prune_threshold)
        logger.info(f"{name}: VAR({models[name].order}) on {list(members)} "
                    f"with {models[name].n_parameters} coefficients")

    group_of = {label: name for name, members in groups.items() for label in members}
    causes = cross_group_causes(report, groups)
    transfer = []
    for effect, inputs in causes.items():
        name = group_of[effect]
        errors = residuals(models[name], select_labels(series, groups[name]))[:, groups[name].index(effect)]
        start = series.n - errors.size
        aligned = ScoreSeries(
            np.column_stack([errors] + [series.column(c)[start:] for c in inputs]),
            (effect, *inputs),
            origin=f"{series.origin}[{name} errors]",
        )
        lags = {c: range(1, cause_lags + 1) for c in inputs}
        try:
            transfer.append(fit_transfer_function(aligned, effect, lags, noise_ar_order))
        except (InsufficientData, NonStationaryNoise) as e:
            logger.warning(f"No transfer function for {effect}: {e.message}")

    arrows = tuple((c, e) for e, inputs in causes.items() for c in inputs)
    logger.info(f"Structured model: {len(groups)} group VARs, {len(transfer)} transfer functions "
                f"for {len(arrows)} cross-group arrows")
    return StructuredModel(models, tuple(transfer), arrows, report.alpha)
