"""
Command-line pipeline driver.

Every subcommand reads its inputs from the output directory (or the paths
given on the command line), writes its artifacts there under fixed names
and prints a one-line summary on stdout. Artifacts are staged and only
moved into place when the whole subcommand succeeded.
"""

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from vfts import artifacts
from vfts.basis import make_basis, smooth_sample
from vfts.causality import FixedLags, ResidualLags, causality_matrix, partial_causality_matrix, prewhiten, render_arrow_table
from vfts.config import (
    APPROACHES,
    DEFAULT_NOISE_AR_ORDER,
    DEFAULT_OUT_DIR,
    DEFAULT_SYNTH_CYCLES,
    FORECAST_MODES,
    SYNTH_PERSISTENCE,
    VARIANCE_TABLE_COMPONENTS,
    PipelineConfig,
    load_config,
)
from vfts.diagnostics import whiteness_report
from vfts.error_handler import ArtifactError, ConfigError, UnknownSubcommand, VftsError, error_payload
from vfts.forecast import (
    baseline_imse,
    evaluate_test,
    evaluation_grid,
    fit_pipeline,
    forecast_curves,
    split_train_test,
    variance_band,
)
from vfts.fpca import PcaModel, choose_q, fpca_multivariate, fpca_univariate, variance_table
from vfts.ingest import parse_cycles, register_cycles
from vfts.logging_config import log_stage, setup_logging
from vfts.screen import screen_cycles
from vfts.structure import fit_structured_model, label_groups
from vfts.synth import SynthConfig, default_processes, generate, write_output
from vfts.var_engine import residuals

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("ingest", "smooth", "screen", "fpca", "fit", "causality", "structure", "diagnose",
               "forecast", "evaluate", "synth", "pipeline")

REGISTERED = "registered.json"
SAMPLES = "samples.json"
SCREENED = "screened_samples.json"
OUTLIERS = "outliers.json"
FPCA_TABLE = "fpca_table.csv"
IMSE_SUMMARY = "imse_summary.csv"

# flag, config key, type
CONFIG_FLAGS = (
    ("--jump-fraction", "jump_fraction", float),
    ("--basis-dimension", "basis_dimension", int),
    ("--fence-factor", "fence_factor", float),
    ("--threshold", "variance_threshold", float),
    ("--holdout", "holdout", int),
    ("--p-max", "p_max", int),
    ("--prune-threshold", "prune_threshold", float),
    ("--alpha", "alpha", float),
    ("--approach", "approach", str),
    ("--eval-points", "eval_points", int),
    ("--mode", "forecast_mode", str),
    ("--max-lag", "max_lag", int),
    ("--seed", "seed", int),
)
CHOICES = {"approach": APPROACHES, "forecast_mode": FORECAST_MODES}


def bundle_name(approach: str) -> str:
    return f"bundle_{approach}.json"


class _Parser(argparse.ArgumentParser):
    """Argument errors become ConfigError instead of exiting."""

    def error(self, message):
        raise ConfigError(f"Invalid arguments: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="Flat JSON config file; flags override its values")
    common.add_argument("--out-dir", default=DEFAULT_OUT_DIR, help="Directory for stage artifacts")
    for flag, key, kind in CONFIG_FLAGS:
        common.add_argument(flag, dest=key, type=kind, default=None, choices=CHOICES.get(key))

    parser = _Parser(prog="vfts", description="Forecasting of vector functional time series by FPCA-VAR and MFPCA-VAR")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", parents=[common], help="Parse cycle CSVs and register curves")
    ingest.add_argument("inputs", nargs="*", help="Cycle CSV files")
    ingest.add_argument("--skip-undetected", action="store_true", help="Drop cycles without a switch point")

    sub.add_parser("smooth", parents=[common], help="B-spline smoothing of registered curves")
    sub.add_parser("screen", parents=[common], help="Functional bagplot outlier screening")

    fpca = sub.add_parser("fpca", parents=[common], help="Print the cumulative-variance table")
    fpca.add_argument("--components", type=int, default=VARIANCE_TABLE_COMPONENTS)

    sub.add_parser("fit", parents=[common], help="Fit the FPCA-VAR / MFPCA-VAR bundles")

    causality = sub.add_parser("causality", parents=[common], help="Granger and partial causality tables")
    causality.add_argument("--fixed-lags", action="store_true", help="Test raw scores with one own lag instead of AR residuals")

    structure = sub.add_parser("structure", parents=[common], help="Group VARs and cross-group transfer functions")
    structure.add_argument("--noise-ar-order", type=int, default=DEFAULT_NOISE_AR_ORDER)

    sub.add_parser("diagnose", parents=[common], help="Residual whiteness diagnostics")

    forecast = sub.add_parser("forecast", parents=[common], help="Forecast curves past the training sample")
    forecast.add_argument("--horizon", type=int, default=None)

    sub.add_parser("evaluate", parents=[common], help="One-step or iterated IMSE on the test cycles")

    synth = sub.add_parser("synth", parents=[common], help="Generate synthetic cycle CSVs with ground truth")
    synth.add_argument("--n-cycles", type=int, default=DEFAULT_SYNTH_CYCLES)
    synth.add_argument("--outliers", type=int, default=0)

    pipeline = sub.add_parser("pipeline", parents=[common], help="Run every stage from cycle CSVs to IMSE")
    pipeline.add_argument("inputs", nargs="*", help="Cycle CSV files")
    pipeline.add_argument("--skip-undetected", action="store_true")
    pipeline.add_argument("--fixed-lags", action="store_true")
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    if not argv:
        raise UnknownSubcommand("No subcommand given", {"valid": list(SUBCOMMANDS)})
    if argv[0] not in SUBCOMMANDS and argv[0] not in ("-h", "--help"):
        raise UnknownSubcommand(f"Unknown subcommand '{argv[0]}'", {"valid": list(SUBCOMMANDS)})
    return build_parser().parse_args(argv)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {key: getattr(args, key) for _, key, _ in CONFIG_FLAGS}
    overrides["inputs"] = list(getattr(args, "inputs", None) or []) or None
    return load_config(args.config).merged(overrides)


@dataclass
class Context:
    config: PipelineConfig
    args: argparse.Namespace
    source: Path
    work: Path
    verbose: bool = True

    def input_path(self, name: str) -> Path:
        """Artifacts written earlier in this run win over those already in the output directory."""
        staged = self.work / name
        return staged if staged.exists() else self.source / name

    def approaches(self) -> List[str]:
        if self.config.approach == "both":
            return ["univariate", "multivariate"]
        return [self.config.approach]

    def bundles(self):
        for approach in self.approaches():
            yield approach, artifacts.load_bundle(self.input_path(bundle_name(approach)))

    def analysis_samples(self):
        path = self.input_path(SCREENED)
        return artifacts.load_samples(path if path.exists() else self.input_path(SAMPLES))


@contextmanager
def staged_outputs(out_dir: Path) -> Iterator[Path]:
    """Yield a scratch directory whose files move into out_dir only on success."""
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield staging
        for path in sorted(staging.iterdir()):
            os.replace(path, out_dir / path.name)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        if created and not any(out_dir.iterdir()):
            out_dir.rmdir()
        raise
    shutil.rmtree(staging, ignore_errors=True)


# Stages
def cmd_ingest(ctx: Context) -> str:
    config = ctx.config
    if not config.inputs:
        raise ConfigError("ingest needs at least one cycle CSV input")
    cycles = [c for path in config.inputs for c in parse_cycles(Path(path))]
    grouped, dropped = register_cycles(cycles, config.jump_fraction,
                                       skip_undetected=getattr(ctx.args, "skip_undetected", False))
    curves = [c for group in grouped.values() for c in group]
    artifacts.save_registered_curves(curves, ctx.work / REGISTERED, config.jump_fraction, dropped)
    counts = ", ".join(f"{len(grouped[p])} {p.value}" for p in sorted(grouped, key=lambda p: p.rank))
    return f"ingest: registered {len(curves)} curves ({counts}), dropped {len(dropped)} cycles"


def cmd_smooth(ctx: Context) -> str:
    grouped = artifacts.load_registered_curves(ctx.input_path(REGISTERED))
    if not grouped:
        raise ArtifactError("No registered curves to smooth")
    processes = sorted(grouped, key=lambda p: p.rank)
    common = set.intersection(*(set(c.cycle_index for c in grouped[p]) for p in processes))
    uneven = set().union(*(set(c.cycle_index for c in grouped[p]) for p in processes)) - common
    if uneven:
        logger.warning(f"Dropping {len(uneven)} cycles not registered for every process")
    basis = make_basis(ctx.config.basis_dimension)
    samples = [smooth_sample([c for c in grouped[p] if c.cycle_index in common], basis, p.value) for p in processes]
    artifacts.save_samples(samples, ctx.work / SAMPLES, excluded=sorted(uneven))
    return f"smooth: {len(common)} cycles x {len(samples)} processes on K={basis.dimension}"


def cmd_screen(ctx: Context) -> str:
    samples = artifacts.load_samples(ctx.input_path(SAMPLES))
    flagged, reports = screen_cycles(samples, ctx.config.fence_factor)
    screened = [s.drop_cycles(flagged) for s in samples]
    artifacts.save_outlier_reports(flagged, reports, ctx.work / OUTLIERS)
    artifacts.save_samples(screened, ctx.work / SCREENED, excluded=flagged)
    n = samples[0].n
    return f"screen: flagged {len(flagged)} of {n} cycles ({100.0 * len(flagged) / n:.1f}%)"


def variance_frame(models: Dict[str, PcaModel], n_components: int) -> pd.DataFrame:
    """Rows per model, columns PC 1..n: cumulative explained variability in percent."""
    rows = {}
    for name, model in models.items():
        values = np.full(n_components, np.nan)
        table = variance_table(model, n_components)
        values[:table.size] = table
        rows[name] = values
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=[str(j + 1) for j in range(n_components)])
    frame.index.name = "PC"
    return frame


def cmd_fpca(ctx: Context) -> str:
    config = ctx.config
    train, _ = split_train_test(ctx.analysis_samples(), config.holdout)
    models = {s.process.capitalize(): fpca_univariate(s) for s in train}
    if len(train) > 1:
        models["Mult."] = fpca_multivariate(train)
    frame = variance_frame(models, getattr(ctx.args, "components", VARIANCE_TABLE_COMPONENTS))
    frame["q"] = [choose_q(m.eigenvalues, config.variance_threshold) for m in models.values()]
    artifacts.write_csv(frame.reset_index(), ctx.work / FPCA_TABLE)
    if ctx.verbose:
        print(frame.drop(columns="q").to_string(float_format=lambda v: f"{v:.4f}"))
    chosen = ", ".join(f"{name}={q}" for name, q in frame["q"].items())
    return f"fpca: threshold {config.variance_threshold:g} selects q ({chosen})"


def cmd_fit(ctx: Context) -> str:
    train, _ = split_train_test(ctx.analysis_samples(), ctx.config.holdout)
    parts = []
    for approach in ctx.approaches():
        bundle = fit_pipeline(train, approach, ctx.config)
        artifacts.save_bundle(bundle, ctx.work / bundle_name(approach))
        parts.append(f"{approach} q={list(bundle.q)} VAR({bundle.var.order}) "
                     f"{bundle.var.n_parameters} coefficients")
    return f"fit: {train[0].n} training cycles; " + "; ".join(parts)


def cmd_causality(ctx: Context) -> str:
    config = ctx.config
    fixed = getattr(ctx.args, "fixed_lags", False)
    parts = []
    for approach, bundle in ctx.bundles():
        series = bundle.series
        if series.q < 2:
            logger.warning(f"{approach}: a single component has no causal structure to test")
            continue
        if fixed:
            report = causality_matrix(series, FixedLags(), config.alpha)
            tested = series
        else:
            report = causality_matrix(series, ResidualLags(config.p_max), config.alpha)
            tested, _ = prewhiten(series, config.p_max)
        final = partial_causality_matrix(tested, report)
        artifacts.save_causality_report(report, ctx.work / f"causality_{approach}.json")
        artifacts.save_causality_report(final, ctx.work / f"causality_{approach}_partial.json")
        text = (f"Granger causality ({report.mode})\n{render_arrow_table(report)}\n"
                f"Partial causality ({final.mode})\n{render_arrow_table(final)}")
        (ctx.work / f"causality_{approach}.txt").write_text(text)
        parts.append(f"{approach} {len(report.arrows())} arrows, {len(final.arrows())} after partial tests")
    return "causality: " + ("; ".join(parts) or "nothing to test")


def cmd_structure(ctx: Context) -> str:
    config = ctx.config
    noise_ar_order = getattr(ctx.args, "noise_ar_order", DEFAULT_NOISE_AR_ORDER)
    parts = []
    for approach, bundle in ctx.bundles():
        if len(label_groups(bundle.series.labels)) < 2:
            logger.warning(f"{approach}: scores {list(bundle.series.labels)} form a single group, no block model")
            continue
        report = artifacts.load_causality_report(ctx.input_path(f"causality_{approach}_partial.json"))
        model = fit_structured_model(bundle.series, report, config.p_max, config.prune_threshold,
                                     noise_ar_order=noise_ar_order)
        artifacts.save_structured_model(model, approach, ctx.work / f"structured_{approach}.json")
        orders = ", ".join(f"{name} VAR({var.order})" for name, var in model.group_models.items())
        parts.append(f"{approach} {orders}, {len(model.transfer_functions)} transfer functions")
    return "structure: " + ("; ".join(parts) or "no grouped scores")


def cmd_diagnose(ctx: Context) -> str:
    config = ctx.config
    parts = []
    for approach, bundle in ctx.bundles():
        resid = residuals(bundle.var, bundle.series)
        m, q = resid.shape
        max_lag = min(config.max_lag, m - q - 1)
        if max_lag < config.max_lag:
            logger.warning(f"{approach}: max_lag clamped from {config.max_lag} to {max_lag} for {m} residuals")
        report = whiteness_report(resid, max_lag, bundle.var.order, config.alpha)
        artifacts.save_whiteness_report(report, ctx.work / f"diagnostics_{approach}.json")
        artifacts.write_csv(report.to_frame(), ctx.work / f"diagnostics_{approach}.csv")
        parts.append(f"{approach} significant CCM lags {report.significant_ccm_lags}, "
                     f"first lags clean={report.adequate_first_5}, adequate={report.adequate}")
    return "diagnose: " + "; ".join(parts)


def cmd_forecast(ctx: Context) -> str:
    config = ctx.config
    horizon = getattr(ctx.args, "horizon", None) or max(config.holdout, 1)
    grid = evaluation_grid(config.eval_points)
    for approach, bundle in ctx.bundles():
        result = forecast_curves(bundle, horizon, grid)
        curves, _ = result.to_frames()
        for process, frame in curves.items():
            artifacts.write_csv(frame.drop(columns="actual"), ctx.work / f"forecast_{approach}_{process}.csv")
        band = pd.DataFrame({"t": grid, **{f"{p}_variance": v for p, v in variance_band(bundle, grid).items()}})
        artifacts.write_csv(band, ctx.work / f"variance_band_{approach}.csv")
    return f"forecast: {horizon} cycles ahead for {', '.join(ctx.approaches())}"


def cmd_evaluate(ctx: Context) -> str:
    config = ctx.config
    train, test = split_train_test(ctx.analysis_samples(), config.holdout)
    if not test:
        raise ConfigError("evaluate needs holdout > 0")
    grid = evaluation_grid(config.eval_points)
    summaries, medians = [], []
    baseline = None
    for approach, bundle in ctx.bundles():
        if bundle.train_range != (train[0].cycle_indices[0], train[0].cycle_indices[-1]):
            raise ConfigError(f"Bundle '{approach}' was fitted on a different train/test split",
                              {"bundle": list(bundle.train_range)})
        result = evaluate_test(bundle, test, grid, config.forecast_mode)
        curves, summary = result.to_frames()
        for process, frame in curves.items():
            artifacts.write_csv(frame, ctx.work / f"evaluation_{approach}_{process}.csv")
        summaries.append(summary)
        medians.append(f"{approach} " + ", ".join(f"{p}={np.median(v):.4g}" for p, v in result.imse.items()))
        baseline = baseline if baseline is not None else baseline_imse(bundle, test, grid)

    for process, values in baseline.items():
        summaries.append(pd.DataFrame({"cycle": list(test[0].cycle_indices), "process": process, "imse": values,
                                       "approach": "mean", "mode": "baseline"}))
    artifacts.write_csv(pd.concat(summaries, ignore_index=True), ctx.work / IMSE_SUMMARY)
    return f"evaluate ({config.forecast_mode}): median IMSE " + "; ".join(medians)


def cmd_synth(ctx: Context) -> str:
    processes = default_processes()
    n_scores = sum(len(p.eigenvalues) for p in processes)
    synth_config = SynthConfig(
        n_cycles=getattr(ctx.args, "n_cycles", DEFAULT_SYNTH_CYCLES),
        processes=processes,
        var_coefficients=SYNTH_PERSISTENCE * np.eye(n_scores)[None],
        outlier_count=getattr(ctx.args, "outliers", 0),
        seed=ctx.config.seed,
        jump_fraction=ctx.config.jump_fraction,
    )
    output = generate(synth_config)
    written = write_output(output, ctx.work)
    return f"synth: {synth_config.n_cycles} cycles, seed {synth_config.seed}, wrote {len(written)} files"


def cmd_pipeline(ctx: Context) -> str:
    quiet = Context(ctx.config, ctx.args, ctx.source, ctx.work, verbose=False)
    stages = [("ingest", cmd_ingest), ("smooth", cmd_smooth), ("screen", cmd_screen), ("fpca", cmd_fpca),
              ("fit", cmd_fit), ("causality", cmd_causality), ("structure", cmd_structure),
              ("diagnose", cmd_diagnose), ("forecast", cmd_forecast)]
    if ctx.config.holdout > 0:
        stages.append(("evaluate", cmd_evaluate))
    for name, handler in stages:
        run_stage(name, handler, quiet)
    return f"pipeline: {len(stages)} stages completed"


COMMANDS: Dict[str, Callable[[Context], str]] = {
    "ingest": cmd_ingest,
    "smooth": cmd_smooth,
    "screen": cmd_screen,
    "fpca": cmd_fpca,
    "fit": cmd_fit,
    "causality": cmd_causality,
    "structure": cmd_structure,
    "diagnose": cmd_diagnose,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


def run_stage(name: str, handler: Callable[[Context], str], ctx: Context) -> str:
    start = time.perf_counter()
    try:
        summary = handler(ctx)
    except VftsError as e:
        # the innermost stage names the failure
        if not getattr(e, "stage", None):
            e.stage = name
        log_stage(name, False, (time.perf_counter() - start) * 1000, error=e.message)
        raise
    log_stage(name, True, (time.perf_counter() - start) * 1000)
    logger.info(summary)
    return summary


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    command = argv[0] if argv else None
    try:
        args = parse_args(argv)
        config = resolve_config(args)
        out_dir = Path(args.out_dir)
        with staged_outputs(out_dir) as work:
            summary = run_stage(args.command, COMMANDS[args.command], Context(config, args, out_dir, work))
    except VftsError as e:
        stage = getattr(e, "stage", None) or (command if command in SUBCOMMANDS else None)
        print(json.dumps(error_payload(e, stage), sort_keys=True), file=sys.stderr)
        return 2 if isinstance(e, (ConfigError, UnknownSubcommand)) else 1
    except Exception as e:
        logger.exception("Unexpected failure")
        print(json.dumps(error_payload(e, command), sort_keys=True), file=sys.stderr)
        return 1
    print(summary)
    return 0
