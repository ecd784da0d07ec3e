"""Stratified trajectory bootstrap for confidence intervals on fitted weights.

Observations within a pseudo-trajectory share a vessel, a place, and a day,
so they are resampled together: each bootstrap replicate draws whole
trajectories with replacement, stratified by group so every replicate keeps
the full data's group composition.  Each replicate is refit (warm-started at
the full-data estimate by default) and percentile intervals are read off the
replicate distribution.

Replicates use seeds derived from (master seed, replicate index), so results
are identical whether replicates run sequentially, in parallel, or in any
order.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import risk
from .estimator import EstimationConfig, FitResult, fit_weights
from .validation import (
    TRAJECTORY_COLUMN,
    ConfigError,
    DataError,
    check_observations,
    to_arrays,
)

logger = logging.getLogger(__name__)

B_DEFAULT = 300
N_BOOT_DEFAULT = 1_000_000
CI_LEVEL_DEFAULT = 0.95

#: Replicate-failure fraction above which the summary is flagged unreliable.
FAILURE_FRACTION_LIMIT = 0.2


@dataclass(frozen=True)
class BootstrapConfig:
    """Resampling settings; ``n_boot`` is capped at the dataset size."""

    B: int = B_DEFAULT
    n_boot: int = N_BOOT_DEFAULT
    seed: int = 0
    warm_start: bool = True
    ci_level: float = CI_LEVEL_DEFAULT
    freeze_scaling: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.B < 1:
            raise ConfigError("B must be at least 1")
        if self.n_boot < 1:
            raise ConfigError("n_boot must be at least 1")
        if not (0.0 < self.ci_level < 1.0):
            raise ConfigError("ci_level must lie strictly between 0 and 1")


def stratified_sample(
    df: pd.DataFrame,
    config: BootstrapConfig,
    replicate_index: int,
    *,
    group_col: str = "group",
) -> pd.DataFrame:
    """One bootstrap resample: whole trajectories with replacement per group.

    Each stratum draws trajectories until its share of the (capped) target
    is reached or exceeded; the final draw is kept even when it overshoots,
    so a drawn trajectory always appears in full.  Deterministic for a fixed
    (seed, replicate_index).
    """
    for col in (TRAJECTORY_COLUMN, group_col):
        if col not in df.columns:
            raise DataError(f"bootstrap requires column {col!r}")
    rng = np.random.default_rng([config.seed, replicate_index])
    n_total = len(df)
    if n_total == 0:
        raise DataError("cannot resample zero observations")
    n_target = min(config.n_boot, n_total)

    groups = df[group_col].astype(str).to_numpy()
    trajectories = df[TRAJECTORY_COLUMN].astype(str).to_numpy()
    chosen_rows = []
    for label in sorted(pd.unique(groups)):
        stratum_rows = np.flatnonzero(groups == label)
        target = int(round(n_target * (stratum_rows.size / n_total)))
        if stratum_rows.size == 0:
            logger.warning("stratum %r has no trajectories; skipped", label)
            continue
        stratum_traj = trajectories[stratum_rows]
        order = np.argsort(stratum_traj, kind="stable")
        sorted_rows = stratum_rows[order]
        traj_ids, starts = np.unique(stratum_traj[order], return_index=True)
        rows_by_traj = dict(zip(traj_ids, np.split(sorted_rows, starts[1:])))
        drawn = 0
        while drawn < target:
            t = traj_ids[rng.integers(0, traj_ids.size)]
            rows = rows_by_traj[t]
            chosen_rows.append(rows)
            drawn += rows.size
    if not chosen_rows:
        return df.iloc[0:0].copy()
    return df.iloc[np.concatenate(chosen_rows)].reset_index(drop=True)


def stratum_share_error(sample: pd.DataFrame, full: pd.DataFrame, group_col: str = "group") -> float:
    """Largest absolute deviation between sample and full-data group shares."""
    full_share = full[group_col].astype(str).value_counts(normalize=True)
    sample_share = sample[group_col].astype(str).value_counts(normalize=True)
    deviations = (sample_share.reindex(full_share.index, fill_value=0.0) - full_share).abs()
    return float(deviations.max())


@dataclass(frozen=True)
class BootstrapSummary:
    """Replicate estimates plus percentile intervals per group."""

    group_labels: list
    replicate_table: pd.DataFrame
    summary_table: pd.DataFrame
    n_requested: int
    n_failures: int
    ci_level: float
    seed: int
    unreliable: bool

    @property
    def theta_w_matrix(self) -> np.ndarray:
        """Successful replicates as a (B_success, G) matrix of whale weights."""
        pivot = self.replicate_table.pivot(index="replicate", columns="group", values="theta_w")
        return pivot[self.group_labels].to_numpy(dtype=float)


def _percentile_interval(values: np.ndarray, ci_level: float) -> tuple[float, float]:
    alpha = (1.0 - ci_level) / 2.0
    return risk.quantile(values, alpha), risk.quantile(values, 1.0 - alpha)


def _one_replicate(df, b, est_config, boot_config, group_col, labels, init, frozen_scaling):
    sample = stratified_sample(df, boot_config, b, group_col=group_col)
    share_err = stratum_share_error(sample, df, group_col)
    grouped = to_arrays(sample, group_col=group_col)
    index_of = {g: i for i, g in enumerate(labels)}
    remap = np.array([index_of[g] for g in grouped.group_labels], dtype=np.int64)
    arrays = dataclasses.replace(grouped.arrays, group_index=remap[grouped.arrays.group_index])
    cfg = dataclasses.replace(est_config, init=init)
    result = fit_weights(
        arrays, cfg, group_labels=labels, group_col=group_col, scaling=frozen_scaling
    )
    if not np.isfinite(result.objective_value):
        raise FloatingPointError("non-finite replicate objective")
    return share_err, result


def bootstrap_weights(
    df: pd.DataFrame,
    est_config: EstimationConfig,
    boot_config: BootstrapConfig,
    *,
    group_col: str = "group",
    fit: FitResult | None = None,
) -> BootstrapSummary:
    """Run the full bootstrap and summarize.

    The full-data fit is computed here when not supplied.  Failed replicates
    (optimizer errors, non-finite objectives) are excluded from summaries and
    counted; more than 20% failures flags the summary unreliable.
    """
    checked = check_observations(df, v_max=est_config.grid.v_max)
    if TRAJECTORY_COLUMN not in checked.columns:
        raise DataError(f"bootstrap requires column {TRAJECTORY_COLUMN!r}")
    if fit is None:
        grouped = to_arrays(checked, group_col=group_col)
        fit = fit_weights(
            grouped.arrays, est_config,
            group_labels=grouped.group_labels, group_col=group_col,
        )
    labels = list(fit.group_labels)
    data_labels = set(checked[group_col].astype(str).unique())
    outside = sorted(data_labels - set(labels))
    if outside:
        raise DataError(f"data contains groups missing from the fit: {outside}")

    init = fit.eta_hat.copy() if boot_config.warm_start else None
    frozen = fit.scaling if boot_config.freeze_scaling else None

    def run(b: int):
        try:
            share_err, result = _one_replicate(
                checked, b, est_config, boot_config, group_col, labels, init, frozen
            )
            return b, share_err, result, None
        except Exception as exc:  # failure policy: exclude and count
            return b, None, None, exc

    outcomes = Parallel(n_jobs=boot_config.n_jobs)(
        delayed(run)(b) for b in range(boot_config.B)
    )
    outcomes.sort(key=lambda item: item[0])

    rows = []
    n_failures = 0
    for b, share_err, result, exc in outcomes:
        if exc is not None:
            n_failures += 1
            logger.warning("bootstrap replicate %d failed: %s", b, exc)
            continue
        for g, label in enumerate(labels):
            rows.append(
                {
                    "replicate": b,
                    "group": label,
                    "eta": float(result.eta_hat[g]),
                    "theta_w": float(result.weights.theta_w[g]),
                    "theta_i": float(result.weights.theta_i[g]),
                    "objective": float(result.objective_value),
                    "share_error": share_err,
                    "converged": bool(result.converged),
                }
            )
    replicate_table = pd.DataFrame(
        rows,
        columns=[
            "replicate", "group", "eta", "theta_w", "theta_i",
            "objective", "share_error", "converged",
        ],
    )

    summary_rows = []
    for label in labels:
        sub = replicate_table.loc[replicate_table["group"] == label]
        if len(sub) == 0:
            continue
        tw = sub["theta_w"].to_numpy(dtype=float)
        ti = sub["theta_i"].to_numpy(dtype=float)
        lo_w, hi_w = _percentile_interval(tw, boot_config.ci_level)
        lo_i, hi_i = _percentile_interval(ti, boot_config.ci_level)
        summary_rows.append(
            {
                "group": label,
                "n_replicates": int(len(sub)),
                "mean_theta_w": float(tw.mean()),
                "lo_theta_w": lo_w,
                "hi_theta_w": hi_w,
                "mean_theta_i": float(ti.mean()),
                "lo_theta_i": lo_i,
                "hi_theta_i": hi_i,
            }
        )
    summary_table = pd.DataFrame(
        summary_rows,
        columns=[
            "group", "n_replicates", "mean_theta_w", "lo_theta_w", "hi_theta_w",
            "mean_theta_i", "lo_theta_i", "hi_theta_i",
        ],
    )

    unreliable = n_failures > FAILURE_FRACTION_LIMIT * boot_config.B
    if unreliable:
        logger.warning(
            "%d of %d bootstrap replicates failed; summary flagged unreliable",
            n_failures, boot_config.B,
        )
    return BootstrapSummary(
        group_labels=labels,
        replicate_table=replicate_table,
        summary_table=summary_table,
        n_requested=boot_config.B,
        n_failures=n_failures,
        ci_level=boot_config.ci_level,
        seed=boot_config.seed,
        unreliable=unreliable,
    )
