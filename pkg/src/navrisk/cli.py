"""Command-line pipeline: prepare, estimate, select-m, bootstrap, validate,
sensitivity, ratio-grid, and synth.

Every command writes its outputs atomically and drops a JSON run manifest
next to the primary output (``<out>.manifest.json``) with the command, the
configuration echo, input and output digests, the seed, the package version,
and the wall-clock duration.  Identical inputs and seed give byte-identical
outputs; only the manifest's wall-clock field varies.

Exit codes: 0 success, 2 usage error, 3 malformed input data, 4 optimizer
failure (best-iterate outputs are still written).
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
import time

import click
import numpy as np
import pandas as pd

from . import __version__, estimator, ingest, ioutils, risk, scenarios, synth, uncertainty
from .validation import GROUP_COLUMNS, ConfigError, DataError

logger = logging.getLogger(__name__)

EXIT_DATA_ERROR = 3
EXIT_OPTIMIZER_ERROR = 4


def _threads(ctx) -> int:
    configured = ctx.obj.get("threads") if ctx.obj else None
    if configured is not None and configured >= 1:
        return configured
    return os.cpu_count() or 1


def _load_table(path) -> pd.DataFrame:
    """Read a data table: the binary observation cache when the file carries
    its magic, CSV otherwise."""
    with open(path, "rb") as handle:
        head = handle.read(len(ioutils.CACHE_MAGIC))
    if head == ioutils.CACHE_MAGIC:
        return ioutils.load_cache(path)
    return pd.read_csv(path)


def _load_fit(path) -> estimator.FitResult:
    return estimator.FitResult.from_json_dict(ioutils.read_json(path))


def _write_manifest(primary_out, command: str, config: dict, inputs: list, outputs: list,
                    seed, started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): ioutils.sha256_file(p) for p in inputs},
        "outputs": {str(p): ioutils.sha256_file(p) for p in outputs},
        "seed": seed,
        "version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 6),
    }
    if extra:
        manifest.update(extra)
    ioutils.write_json(f"{primary_out}.manifest.json", manifest)


def _handle_errors(fn):
    """Map library errors onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, ConfigError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA_ERROR)
        except FloatingPointError as exc:
            click.echo(f"optimizer failure: {exc}", err=True)
            sys.exit(EXIT_OPTIMIZER_ERROR)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="navrisk")
@click.option("--threads", type=int, default=None, envvar="NAVRISK_THREADS",
              help="Worker count for parallel stages (default: available parallelism).")
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
@click.pass_context
def main(ctx, threads, verbose):
    """Reconstruct vessel speed decisions as risk trade-offs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Raw AIS-style record CSV.")
@click.option("--whale-grid", required=True, type=click.Path(exists=True),
              help="Whale intensity grid CSV (lat, lon, intensity[, time_key]).")
@click.option("--baseline-col", default="mu", show_default=True,
              help="Column holding the precomputed baseline speed.")
@click.option("--ice-unit", type=click.Choice(["tenths", "fraction"]), default="tenths",
              show_default=True, help="Unit of the ice concentration column.")
@click.option("--column-map", type=click.Path(exists=True), default=None,
              help="JSON file mapping canonical column names to input headers.")
@click.option("--dt-min", default=ingest.DT_MIN_HOURS, show_default=True,
              help="Minimum elapsed hours for a moving segment.")
@click.option("--d-min", default=ingest.D_MIN_KM, show_default=True,
              help="Minimum displacement km for a moving segment.")
@click.option("--v-max", default=risk.V_MAX_DEFAULT, show_default=True,
              help="Speed cap in knots.")
@click.option("--out", required=True, type=click.Path(), help="Prepared observation CSV.")
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Binary cache output (default: <out> with .nvc extension).")
@_handle_errors
def prepare(input_path, whale_grid, baseline_col, ice_unit, column_map,
            dt_min, d_min, v_max, out, cache_path):
    """Build analysis-ready observations from raw records."""
    started = time.monotonic()
    column_map_dict = ioutils.read_json(column_map) if column_map else None
    records = ingest.read_records(input_path, column_map_dict)
    grid = pd.read_csv(whale_grid)
    obs, stats = ingest.prepare_observations(
        records, grid, baseline_col=baseline_col, ice_unit=ice_unit,
        dt_min=dt_min, d_min=d_min, v_max=v_max,
    )
    ioutils.write_csv(out, obs)
    cache_path = cache_path or (os.path.splitext(out)[0] + ".nvc")
    ioutils.save_cache(cache_path, obs)
    _write_manifest(
        out, "prepare",
        {
            "baseline_col": baseline_col, "ice_unit": ice_unit,
            "dt_min": dt_min, "d_min": d_min, "v_max": v_max,
            "column_map": column_map_dict,
        },
        inputs=[input_path, whale_grid], outputs=[out, cache_path],
        seed=None, started=started, extra={"stats": stats.to_dict()},
    )
    click.echo(f"prepared {stats.n_observations} observations -> {out}")


def _estimation_config(m, ridge, grid_step, v_max, max_evals, rel_tol, eta_bound,
                       seed, multi_start) -> estimator.EstimationConfig:
    return estimator.EstimationConfig(
        ridge=ridge,
        grid=risk.SpeedGrid(v_max=v_max, step=grid_step),
        m=m,
        max_evals=max_evals,
        rel_tol=rel_tol,
        eta_bound=eta_bound,
        seed=seed,
        multi_start=multi_start,
    )


def _estimation_options(fn):
    options = [
        click.option("--lambda", "ridge", default=estimator.RIDGE_DEFAULT, show_default=True,
                     help="Ridge penalty weight on the squared logits."),
        click.option("--grid-step", default=risk.GRID_STEP_DEFAULT, show_default=True,
                     help="Candidate speed grid step in knots."),
        click.option("--v-max", default=risk.V_MAX_DEFAULT, show_default=True,
                     help="Grid maximum speed in knots."),
        click.option("--max-evals", default=estimator.MAX_EVALS_DEFAULT, show_default=True,
                     help="Objective evaluation budget per fit."),
        click.option("--rel-tol", default=estimator.REL_TOL_DEFAULT, show_default=True,
                     help="Relative objective tolerance for termination."),
        click.option("--eta-bound", default=estimator.ETA_BOUND_DEFAULT, show_default=True,
                     help="Box bound on each logit."),
        click.option("--multi-start", is_flag=True,
                     help="Also start from +/-2 perturbations of the init."),
        click.option("--seed", default=0, show_default=True, help="Seed echoed into outputs."),
        click.option("--group-by", type=click.Choice(sorted(GROUP_COLUMNS)),
                     default="vessel_group", show_default=True,
                     help="Grouping variable for the weights."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Prepared observations (CSV or cache).")
@click.option("--m", default=2, show_default=True, help="Acoustic exponent.")
@_estimation_options
@click.option("--out", required=True, type=click.Path(), help="Fit result JSON.")
@_handle_errors
def estimate(data, m, ridge, grid_step, v_max, max_evals, rel_tol, eta_bound,
             multi_start, seed, group_by, out):
    """Fit per-group trade-off weights."""
    started = time.monotonic()
    df = _load_table(data)
    est = estimator.TradeoffEstimator(
        m=m, ridge=ridge, grid_step=grid_step, v_max=v_max, max_evals=max_evals,
        rel_tol=rel_tol, eta_bound=eta_bound, group_col=GROUP_COLUMNS[group_by],
        seed=seed, multi_start=multi_start,
    )
    est.fit(df)
    result = est.result_
    ioutils.write_json(out, result.to_json_dict())
    _write_manifest(out, "estimate", result.config_echo | {"group_by": group_by},
                    inputs=[data], outputs=[out], seed=seed, started=started)
    for g, label in enumerate(result.group_labels):
        click.echo(
            f"{label}: theta_w={result.weights.theta_w[g]:.4f} "
            f"theta_i={result.weights.theta_i[g]:.4f} "
            f"(n={result.per_group_obs_counts[label]})"
        )
    if not result.converged:
        click.echo("optimizer failure: budget exhausted before convergence; "
                   "best iterate written", err=True)
        sys.exit(EXIT_OPTIMIZER_ERROR)


@main.command(name="select-m")
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Prepared observations (CSV or cache).")
@_estimation_options
@click.option("--out", required=True, type=click.Path(), help="Per-candidate objective CSV.")
@_handle_errors
def select_m_cmd(data, ridge, grid_step, v_max, max_evals, rel_tol, eta_bound,
                 multi_start, seed, group_by, out):
    """Pick the acoustic exponent by refitting per candidate."""
    started = time.monotonic()
    df = _load_table(data)
    config = _estimation_config(2, ridge, grid_step, v_max, max_evals, rel_tol,
                                eta_bound, seed, multi_start)
    m_star, table = estimator.select_m(df, config, group_col=GROUP_COLUMNS[group_by])
    ioutils.write_csv(out, table)
    _write_manifest(out, "select-m", {"group_by": group_by, "ridge": ridge, "seed": seed},
                    inputs=[data], outputs=[out], seed=seed, started=started,
                    extra={"m_star": m_star})
    click.echo(f"selected m = {m_star}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True),
              help="Fit result JSON from estimate.")
@click.option("--B", "b_replicates", default=uncertainty.B_DEFAULT, show_default=True,
              help="Bootstrap replicates.")
@click.option("--n-boot", default=uncertainty.N_BOOT_DEFAULT, show_default=True,
              help="Target observations per replicate (capped at dataset size).")
@click.option("--seed", default=0, show_default=True)
@click.option("--ci-level", default=uncertainty.CI_LEVEL_DEFAULT, show_default=True)
@click.option("--warm-start/--no-warm-start", default=True, show_default=True,
              help="Initialize replicates at the full-data estimate.")
@click.option("--freeze-scaling", is_flag=True,
              help="Reuse the full-data scaling constants in every replicate.")
@click.option("--out", required=True, type=click.Path(), help="Replicate table CSV.")
@click.option("--summary-out", type=click.Path(), default=None,
              help="Summary CSV (default: <out stem>_summary.csv).")
@click.pass_context
@_handle_errors
def bootstrap(ctx, data, fit_path, b_replicates, n_boot, seed, ci_level,
              warm_start, freeze_scaling, out, summary_out):
    """Stratified trajectory bootstrap for weight uncertainty."""
    started = time.monotonic()
    df = _load_table(data)
    fit = _load_fit(fit_path)
    est_config = estimator.EstimationConfig(
        ridge=float(fit.config_echo.get("ridge", estimator.RIDGE_DEFAULT)),
        grid=risk.SpeedGrid(
            v_max=float(fit.config_echo.get("v_max", risk.V_MAX_DEFAULT)),
            step=float(fit.config_echo.get("grid_step", risk.GRID_STEP_DEFAULT)),
        ),
        m=fit.m,
        max_evals=int(fit.config_echo.get("max_evals", estimator.MAX_EVALS_DEFAULT)),
        rel_tol=float(fit.config_echo.get("rel_tol", estimator.REL_TOL_DEFAULT)),
        eta_bound=float(fit.config_echo.get("eta_bound", estimator.ETA_BOUND_DEFAULT)),
        seed=seed,
    )
    boot_config = uncertainty.BootstrapConfig(
        B=b_replicates, n_boot=n_boot, seed=seed, warm_start=warm_start,
        ci_level=ci_level, freeze_scaling=freeze_scaling, n_jobs=_threads(ctx),
    )
    summary = uncertainty.bootstrap_weights(
        df, est_config, boot_config, group_col=fit.group_col, fit=fit
    )
    summary_out = summary_out or (os.path.splitext(out)[0] + "_summary.csv")
    ioutils.write_csv(out, summary.replicate_table)
    ioutils.write_csv(summary_out, summary.summary_table)
    _write_manifest(
        out, "bootstrap",
        {"B": b_replicates, "n_boot": n_boot, "ci_level": ci_level,
         "warm_start": warm_start, "freeze_scaling": freeze_scaling},
        inputs=[data, fit_path], outputs=[out, summary_out],
        seed=seed, started=started,
        extra={"n_failures": summary.n_failures, "unreliable": summary.unreliable},
    )
    if summary.unreliable:
        click.echo(
            f"warning: {summary.n_failures} of {b_replicates} replicates failed; "
            "summary flagged unreliable", err=True,
        )
    click.echo(f"bootstrap complete: {b_replicates - summary.n_failures} replicates -> {out}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Validation table CSV.")
@_handle_errors
def validate(data, fit_path, out):
    """Observed-vs-optimal speed agreement per group."""
    started = time.monotonic()
    df = _load_table(data)
    fit = _load_fit(fit_path)
    table = scenarios.validation_report(df, fit)
    ioutils.write_csv(out, table)
    _write_manifest(out, "validate", {}, inputs=[data, fit_path], outputs=[out],
                    seed=None, started=started)
    click.echo(table.to_string(index=False))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True))
@click.option("--target", type=click.Choice(scenarios.PERTURBATION_TARGETS), required=True,
              help="Risk component whose weight is scaled.")
@click.option("--factor", default=2.0, show_default=True, help="Scale factor.")
@click.option("--out", required=True, type=click.Path(), help="Sensitivity table CSV.")
@_handle_errors
def sensitivity(data, fit_path, target, factor, out):
    """Optimal-speed shifts under a counterfactual weight change."""
    started = time.monotonic()
    df = _load_table(data)
    fit = _load_fit(fit_path)
    spec = scenarios.PerturbationSpec(target=target, factor=factor)
    table = scenarios.sensitivity_report(df, fit, [spec])
    ioutils.write_csv(out, table)
    _write_manifest(out, "sensitivity", {"target": target, "factor": factor},
                    inputs=[data, fit_path], outputs=[out], seed=None, started=started)
    click.echo(table.to_string(index=False))


@main.command(name="ratio-grid")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--min-count", default=5, show_default=True,
              help="Minimum observations per cell-month.")
@click.option("--trim", default=0.01, show_default=True,
              help="Winsorization tail mass on each side.")
@click.option("--eps", default=1e-6, show_default=True,
              help="Floor for the mean intensities inside the log ratio.")
@click.option("--out", required=True, type=click.Path(), help="Ratio grid CSV.")
@_handle_errors
def ratio_grid_cmd(data, min_count, trim, eps, out):
    """Per cell-month log10 ratio of mean ice to mean whale intensity."""
    started = time.monotonic()
    df = _load_table(data)
    config = scenarios.RatioGridConfig(trim_lo=trim, trim_hi=1.0 - trim,
                                       min_count=min_count, eps=eps)
    table = scenarios.ratio_grid(df, config)
    ioutils.write_csv(out, table)
    _write_manifest(out, "ratio-grid", {"min_count": min_count, "trim": trim, "eps": eps},
                    inputs=[data], outputs=[out], seed=None, started=started)
    click.echo(f"{len(table)} cell-month rows -> {out}")


@main.command(name="synth")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file of generator settings; flags override its entries.")
@click.option("--n-obs", type=int, default=None)
@click.option("--n-groups", type=int, default=None)
@click.option("--n-trajectories", type=int, default=None)
@click.option("--theta-w", default=None, help="Comma-separated true weights, one per group.")
@click.option("--m-true", type=int, default=None)
@click.option("--noise-sd", type=float, default=None)
@click.option("--stationary-rate", type=float, default=None)
@click.option("--co-occurrence", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path(), help="Observation CSV.")
@click.option("--truth", "truth_path", type=click.Path(), default=None,
              help="Ground-truth JSON (default: <out stem>_truth.json).")
@_handle_errors
def synth_cmd(config_path, n_obs, n_groups, n_trajectories, theta_w, m_true,
              noise_sd, stationary_rate, co_occurrence, seed, out, truth_path):
    """Generate a synthetic observation set with known weights."""
    started = time.monotonic()
    settings = dict(ioutils.read_json(config_path)) if config_path else {}
    overrides = {
        "n_obs": n_obs, "n_groups": n_groups, "n_trajectories": n_trajectories,
        "m_true": m_true, "noise_sd": noise_sd, "stationary_rate": stationary_rate,
        "co_occurrence": co_occurrence, "seed": seed,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    if theta_w is not None:
        settings["theta_w_true"] = tuple(float(x) for x in theta_w.split(","))
    for key in ("theta_w_true", "mu_range"):
        if key in settings and isinstance(settings[key], list):
            settings[key] = tuple(settings[key])
    try:
        config = synth.SynthConfig(**settings)
    except TypeError as exc:
        raise ConfigError(f"invalid generator setting: {exc}") from exc
    df, truth = synth.generate(config)
    truth_path = truth_path or (os.path.splitext(out)[0] + "_truth.json")
    ioutils.write_csv(out, df)
    ioutils.write_json(truth_path, truth)
    _write_manifest(out, "synth", {k: v for k, v in settings.items()},
                    inputs=[config_path] if config_path else [],
                    outputs=[out, truth_path], seed=config.seed, started=started)
    click.echo(f"generated {len(df)} observations -> {out}")


if __name__ == "__main__":
    main()
