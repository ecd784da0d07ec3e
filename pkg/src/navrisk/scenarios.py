"""Counterfactual and diagnostic analyses on top of a fitted model.

Three deliverables: weight-perturbation sensitivity (how the model-implied
optimal speed shifts when one risk's weight is scaled and the pair is
renormalized), observed-vs-optimal validation tables (correlations and
means), and per-cell-month log ratios of mean ice concentration to mean
whale intensity for mapping where each risk dominates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import risk
from .estimator import FitResult, arrays_for_fit
from .validation import ConfigError, DataError

PERTURBATION_TARGETS = ("whale", "ice")


@dataclass(frozen=True)
class PerturbationSpec:
    """Scale one risk weight by ``factor``, then renormalize the pair."""

    target: str
    factor: float

    def __post_init__(self):
        if self.target not in PERTURBATION_TARGETS:
            raise ConfigError(f"target must be one of {PERTURBATION_TARGETS}, got {self.target!r}")
        if not (np.isfinite(self.factor) and self.factor > 0):
            raise ConfigError("factor must be positive and finite")


@dataclass(frozen=True)
class RatioGridConfig:
    """Settings for the ice/whale log-ratio grid."""

    cell_col: str = "cell_id"
    month_col: str = "month"
    trim_lo: float = 0.01
    trim_hi: float = 0.99
    min_count: int = 5
    eps: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.trim_lo < self.trim_hi <= 1.0):
            raise ConfigError("trim quantiles must satisfy 0 <= lo < hi <= 1")
        if self.min_count < 1:
            raise ConfigError("min_count must be at least 1")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")


def perturb_weights(weights: risk.RiskWeights, spec: PerturbationSpec) -> risk.RiskWeights:
    """Counterfactual weights: target component scaled, pair renormalized.

    Per group: scaling whale by f maps (tw, ti) to (f*tw, ti)/(f*tw + ti),
    so the result stays on the simplex exactly (theta_i set to 1 - theta_w).
    """
    tw = weights.theta_w.copy()
    ti = weights.theta_i.copy()
    if spec.target == "whale":
        tw = tw * spec.factor
    else:
        ti = ti * spec.factor
    new_tw = tw / (tw + ti)
    return risk.RiskWeights(theta_w=new_tw, theta_i=1.0 - new_tw, m=weights.m)


def _grid_from_fit(fit: FitResult) -> risk.SpeedGrid:
    return risk.SpeedGrid(
        v_max=float(fit.config_echo.get("v_max", risk.V_MAX_DEFAULT)),
        step=float(fit.config_echo.get("grid_step", risk.GRID_STEP_DEFAULT)),
    )


def sensitivity_report(
    df: pd.DataFrame,
    fit: FitResult,
    specs: list[PerturbationSpec],
) -> pd.DataFrame:
    """Per-(group, spec) shifts in model-implied optimal speed.

    For each spec, optimal speeds are recomputed under the perturbed weights
    (same scaling constants and grid as the fit) and the deltas
    v*_perturbed - v*_baseline are summarized.  Medians of exactly 0 are the
    expected outcome on a discrete grid and are reported as such.
    """
    arrays = arrays_for_fit(df, fit)
    grid = _grid_from_fit(fit)
    v_base = risk.optimal_speeds(arrays, fit.weights, fit.scaling, grid)
    rows = []
    for spec in specs:
        perturbed = perturb_weights(fit.weights, spec)
        v_new = risk.optimal_speeds(arrays, perturbed, fit.scaling, grid)
        delta = v_new - v_base
        for g, label in enumerate(fit.group_labels):
            mask = arrays.group_index == g
            if not np.any(mask):
                continue
            rows.append(
                {
                    "group": label,
                    "target": spec.target,
                    "factor": spec.factor,
                    "n": int(mask.sum()),
                    "mean_delta": float(delta[mask].mean()),
                    "median_delta": float(np.median(delta[mask])),
                    "mean_v_baseline": float(v_base[mask].mean()),
                    "mean_v_perturbed": float(v_new[mask].mean()),
                }
            )
    return pd.DataFrame(
        rows,
        columns=[
            "group", "target", "factor", "n",
            "mean_delta", "median_delta", "mean_v_baseline", "mean_v_perturbed",
        ],
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; NaN (a blank cell) when undefined."""
    if x.size < 2:
        return np.nan
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0 or not (np.isfinite(sx) and np.isfinite(sy)):
        return np.nan
    return float(np.corrcoef(x, y)[0, 1])


def validation_report(df: pd.DataFrame, fit: FitResult) -> pd.DataFrame:
    """Observed-vs-optimal agreement per group and overall.

    Reports the Pearson correlation between observed and model-implied
    optimal speed plus the two means; groups where either speed is constant
    get a blank correlation cell.  The overall row is labeled 'overall'.
    """
    arrays = arrays_for_fit(df, fit)
    grid = _grid_from_fit(fit)
    v_opt = risk.optimal_speeds(arrays, fit.weights, fit.scaling, grid)
    v_obs = arrays.v_obs
    rows = []
    for g, label in enumerate(fit.group_labels):
        mask = arrays.group_index == g
        if not np.any(mask):
            continue
        rows.append(
            {
                "group": label,
                "n": int(mask.sum()),
                "correlation": _pearson(v_obs[mask], v_opt[mask]),
                "mean_observed": float(v_obs[mask].mean()),
                "mean_optimal": float(v_opt[mask].mean()),
            }
        )
    rows.append(
        {
            "group": "overall",
            "n": int(arrays.n),
            "correlation": _pearson(v_obs, v_opt),
            "mean_observed": float(v_obs.mean()),
            "mean_optimal": float(v_opt.mean()),
        }
    )
    return pd.DataFrame(rows, columns=["group", "n", "correlation", "mean_observed", "mean_optimal"])


def ratio_grid(df: pd.DataFrame, config: RatioGridConfig | None = None) -> pd.DataFrame:
    """Per (cell, month) log10 of mean ice over mean whale intensity.

    Cells with fewer than ``min_count`` observations are dropped.  Both means
    are floored at ``eps`` before the ratio so the log is always finite (the
    stated floor covers the whale mean; flooring the ice mean too keeps the
    finiteness guarantee symmetric).  The log ratios are then winsorized at
    the trim quantiles.
    """
    config = config if config is not None else RatioGridConfig()
    for col in (config.cell_col, config.month_col, "ice_tenths", "whale"):
        if col not in df.columns:
            raise DataError(f"ratio grid requires column {col!r}")
    grouped = (
        df.assign(**{config.cell_col: df[config.cell_col].astype(str)})
        .groupby([config.cell_col, config.month_col], sort=True)
        .agg(
            n=("whale", "size"),
            mean_ice=("ice_tenths", "mean"),
            mean_whale=("whale", "mean"),
        )
        .reset_index()
    )
    grouped = grouped.loc[grouped["n"] >= config.min_count].reset_index(drop=True)
    if len(grouped) == 0:
        grouped["log10_ratio"] = pd.Series(dtype=float)
        return grouped
    ice = np.maximum(grouped["mean_ice"].to_numpy(dtype=float), config.eps)
    whale = np.maximum(grouped["mean_whale"].to_numpy(dtype=float), config.eps)
    ratio = np.log10(ice / whale)
    lo = risk.quantile(ratio, config.trim_lo)
    hi = risk.quantile(ratio, config.trim_hi)
    grouped["log10_ratio"] = np.clip(ratio, lo, hi)
    return grouped
