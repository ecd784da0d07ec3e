"""Synthetic data generation: the package's primary verification path.

The generator runs the decision model forward: it samples environments
(baseline speed, whale intensity, ice concentration, duration) for grouped
pseudo-trajectories, finds each observation's optimal speed under known true
weights on a fine grid, perturbs it with truncated Gaussian noise, and emits
an analysis-ready observation table plus the ground truth.  Fitting that
table back should recover the true weights; acceptance tests quantify how
well.

Scaling constants are circular here: they are defined from observed speeds,
which the generator has not produced yet.  A pilot pass breaks the loop:
speeds drawn uniformly over the grid range give pilot constants at natural
magnitudes, and the true-weight optima are computed under those.  A
downstream fit recomputes its constants from the published speeds; the
shared normalization shifts all three components together, so the
whale-vs-ice balance the weights encode survives, which is what recovery
tests measure.  (Iterating speeds and constants to an exact joint fixed
point is unstable in both directions: the deviation normalizer collapses
speeds onto the baseline, the risk normalizers collapse them to zero.)

Environments are drawn per trajectory and jittered per observation, giving
within-trajectory correlation (which the trajectory bootstrap relies on).
Each trajectory sits in one spatial cell of one of four types: both risks
present, whale only, ice only, or neither.  The ``co_occurrence`` knob sets
the share of both-risk cells, where the weight trade-off is most sharply
identified.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from . import risk
from .validation import ConfigError

logger = logging.getLogger(__name__)

FINE_STEP_DEFAULT = 0.1


@dataclass(frozen=True)
class SynthConfig:
    """Forward-model settings and ground-truth parameters."""

    n_obs: int = 50_000
    n_groups: int = 3
    n_trajectories: int = 500
    theta_w_true: tuple = (0.1, 0.5, 0.9)
    m_true: int = 2
    noise_sd: float = 0.25
    stationary_rate: float = 0.03
    co_occurrence: float = 0.7
    mu_range: tuple = (4.0, 16.0)
    whale_mean: float = 1.0
    whale_sigma: float = 0.6
    ice_alpha: float = 2.0
    ice_beta: float = 2.0
    ice_max: float = 10.0
    ice_jitter_sd: float = 0.4
    dt_median: float = 0.018
    dt_sigma: float = 0.7
    n_cells: int = 40
    v_max: float = risk.V_MAX_DEFAULT
    fine_step: float = FINE_STEP_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < self.n_groups:
            raise ConfigError("n_obs must be at least n_groups")
        if self.n_groups < 1 or self.n_trajectories < 1:
            raise ConfigError("n_groups and n_trajectories must be positive")
        if len(self.theta_w_true) != self.n_groups:
            raise ConfigError("theta_w_true must have one entry per group")
        if any(not (0.0 < t < 1.0) for t in self.theta_w_true):
            raise ConfigError("true theta_w values must lie strictly in (0, 1)")
        if self.m_true not in risk.VALID_EXPONENTS:
            raise ConfigError(f"m_true must be one of {risk.VALID_EXPONENTS}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        if not (0.0 <= self.stationary_rate < 1.0):
            raise ConfigError("stationary_rate must lie in [0, 1)")
        if not (0.0 <= self.co_occurrence <= 1.0):
            raise ConfigError("co_occurrence must lie in [0, 1]")
        if not (0.0 <= self.ice_max <= 10.0):
            raise ConfigError("ice_max must lie in [0, 10] tenths")
        if self.ice_jitter_sd < 0:
            raise ConfigError("ice_jitter_sd must be nonnegative")
        if not (0.0 < self.mu_range[0] < self.mu_range[1] <= self.v_max):
            raise ConfigError("mu_range must satisfy 0 < lo < hi <= v_max")
        if self.dt_median <= 0 or self.dt_sigma < 0:
            raise ConfigError("dt_median must be positive and dt_sigma nonnegative")


def true_eta(theta_w: float) -> float:
    """Logit consistent with theta_w = 1/(1+e^eta)."""
    return float(np.log((1.0 - theta_w) / theta_w))


def _cell_type_probs(co_occurrence: float) -> np.ndarray:
    """Mix of cell types: both, whale-only, ice-only, neither."""
    rest = 1.0 - co_occurrence
    return np.array([co_occurrence, 0.35 * rest, 0.35 * rest, 0.30 * rest])


_CELL_PREFIX = {0: "B", 1: "W", 2: "I", 3: "N"}


def generate(config: SynthConfig) -> tuple[pd.DataFrame, dict]:
    """Run the forward model; returns (observations, ground truth record)."""
    rng = np.random.default_rng(config.seed)
    labels = [f"G{g}" for g in range(config.n_groups)]
    theta_w = np.asarray(config.theta_w_true, dtype=float)
    weights = risk.RiskWeights(theta_w=theta_w, theta_i=1.0 - theta_w, m=config.m_true)

    if config.whale_mean <= 0 or _cell_type_probs(config.co_occurrence)[[0, 1]].sum() == 0:
        logger.warning("whale intensity is degenerate; theta_w is not identifiable")

    # observation quotas per group, then per trajectory within the group
    quotas = np.full(config.n_groups, config.n_obs // config.n_groups)
    quotas[: config.n_obs % config.n_groups] += 1

    type_probs = _cell_type_probs(config.co_occurrence)
    rows_group, rows_traj, rows_cell, rows_month = [], [], [], []
    mu_parts, whale_parts, ice_parts = [], [], []
    for g, label in enumerate(labels):
        n_traj = min(config.n_trajectories, int(quotas[g]))
        lengths = np.full(n_traj, quotas[g] // n_traj)
        lengths[: quotas[g] % n_traj] += 1
        for t in range(n_traj):
            n = int(lengths[t])
            cell_type = int(rng.choice(4, p=type_probs))
            cell_id = f"{_CELL_PREFIX[cell_type]}{int(rng.integers(0, config.n_cells)):03d}"
            month = int(rng.integers(1, 13))
            has_whale = cell_type in (0, 1)
            has_ice = cell_type in (0, 2)
            d_traj = (
                float(rng.lognormal(np.log(config.whale_mean), config.whale_sigma))
                if has_whale and config.whale_mean > 0
                else 0.0
            )
            i_traj = config.ice_max * float(rng.beta(config.ice_alpha, config.ice_beta)) if has_ice else 0.0
            mu_traj = float(rng.uniform(*config.mu_range))

            mu = np.clip(mu_traj + rng.normal(0.0, 0.5, n), 0.1, config.v_max)
            whale = d_traj * np.exp(rng.normal(0.0, 0.3, n)) if has_whale else np.zeros(n)
            ice = (
                np.clip(i_traj + rng.normal(0.0, config.ice_jitter_sd, n), 0.0, config.ice_max)
                if has_ice
                else np.zeros(n)
            )

            rows_group.append(np.full(n, g))
            rows_traj.extend([f"{label}-T{t:04d}"] * n)
            rows_cell.extend([cell_id] * n)
            rows_month.extend([month] * n)
            mu_parts.append(mu)
            whale_parts.append(whale)
            ice_parts.append(ice)

    group_index = np.concatenate(rows_group).astype(np.int64)
    mu = np.concatenate(mu_parts)
    whale = np.concatenate(whale_parts)
    ice = np.concatenate(ice_parts)
    n_total = mu.shape[0]

    dt = rng.lognormal(np.log(config.dt_median), config.dt_sigma, n_total)
    stationary = rng.random(n_total) < config.stationary_rate
    mu = np.where(stationary, 0.0, mu)
    vsafe = risk.v_safe(ice)

    def arrays_with(v: np.ndarray) -> risk.ObservationArrays:
        return risk.ObservationArrays(
            v_obs=v, dt=dt, mu=mu, whale=whale, ice_tenths=ice,
            vsafe=vsafe, group_index=group_index,
        )

    # pilot pass: uniform speeds set the normalizers, then the true-weight
    # optima are computed once under them
    fine_grid = risk.SpeedGrid(v_max=config.v_max, step=config.fine_step)
    v_pilot = np.where(stationary, 0.0, rng.uniform(0.0, config.v_max, n_total))
    scaling = risk.compute_scaling(arrays_with(v_pilot), config.m_true)
    v_star = risk.optimal_speeds(arrays_with(v_pilot), weights, scaling, fine_grid)
    v_star = np.where(stationary, 0.0, v_star)

    noise = rng.normal(0.0, config.noise_sd, n_total) if config.noise_sd > 0 else np.zeros(n_total)
    v_obs = np.clip(v_star + noise, 0.0, config.v_max)
    v_obs = np.where(stationary, 0.0, v_obs)
    # speeds clipped to exactly zero fall under the stationary baseline rule
    mu = np.where(v_obs == 0.0, 0.0, mu)

    df = pd.DataFrame(
        {
            "trajectory_id": rows_traj,
            "cell_id": rows_cell,
            "month": np.asarray(rows_month, dtype=np.int64),
            "group": [labels[g] for g in group_index],
            "status": group_index,
            "v_obs": v_obs,
            "dt": dt,
            "mu": mu,
            "whale": whale,
            "ice_tenths": ice,
            "v_safe": vsafe,
        }
    )
    truth = {
        "theta_w": {label: float(theta_w[g]) for g, label in enumerate(labels)},
        "eta": {label: true_eta(theta_w[g]) for g, label in enumerate(labels)},
        "m": int(config.m_true),
        "noise_sd": float(config.noise_sd),
        "seed": int(config.seed),
        "scaling": scaling.to_dict(),
        "n_obs": int(n_total),
        "config": asdict(config),
    }
    return df, truth


#: Vessel-group labels used in the raw AIS-style sample.
SAMPLE_GROUPS = ("Cargo", "Tanker", "Tug Tow")


def make_raw_sample(
    n_vessels: int = 8,
    n_days: int = 3,
    records_per_day: int = 42,
    seed: int = 7,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Small raw record set plus a whale grid, for the ingestion pipeline.

    Vessels random-walk through a polar box with 1-degree grid cells, so
    trajectories split when a cell boundary is crossed.  The sample includes
    the messiness ingestion must handle: missing and sentinel speed-over-
    ground values, duplicate timestamps, and a few missing baselines.
    """
    rng = np.random.default_rng(seed)
    lat_box = (70.0, 75.0)
    lon_box = (-65.0, -55.0)
    rows = []
    for v in range(n_vessels):
        mmsi = 200_000_000 + v
        group = SAMPLE_GROUPS[v % len(SAMPLE_GROUPS)]
        status = 0 if v % 4 else 8
        for day in range(n_days):
            lat = float(rng.uniform(lat_box[0] + 0.5, lat_box[1] - 0.5))
            lon = float(rng.uniform(lon_box[0] + 0.5, lon_box[1] - 0.5))
            ice_base = float(10.0 * rng.beta(2.0, 3.0))
            t = pd.Timestamp("2019-07-01", tz="UTC") + pd.Timedelta(days=day, hours=float(rng.uniform(0, 6)))
            heading = float(rng.uniform(0, 2 * np.pi))
            for r in range(records_per_day):
                dt_h = float(rng.uniform(0.02, 0.15))
                speed = float(np.clip(rng.normal(10.0, 3.0), 0.0, 20.0))
                if rng.random() < 0.05:
                    speed = 0.0  # loitering
                dist_km = speed * 1.852 * dt_h
                heading += float(rng.normal(0.0, 0.3))
                lat = float(np.clip(lat + dist_km * np.cos(heading) / 111.0, *lat_box))
                lon = float(np.clip(lon + dist_km * np.sin(heading) / (111.0 * np.cos(np.radians(lat))), *lon_box))
                if not (r > 0 and rng.random() < 0.03):
                    t = t + pd.Timedelta(hours=dt_h)
                # else: timestamp unchanged, a duplicate-time record
                sog = speed + float(rng.normal(0.0, 0.3))
                draw = rng.random()
                if draw < 0.08:
                    sog = np.nan  # transponder gap
                elif draw < 0.10:
                    sog = 102.3  # sentinel: not available
                elif draw < 0.11:
                    sog = -1.0  # corrupted
                mu = float(np.clip(rng.normal(10.0, 2.0), 2.0, 18.0))
                if rng.random() < 0.02:
                    mu = np.nan  # baseline model had no coverage
                rows.append(
                    {
                        "mmsi": mmsi,
                        "cell_id": f"{int(np.floor(lat))}_{int(np.floor(lon))}",
                        "time_id": day,
                        "timestamp": t.isoformat(),
                        "lat": round(lat, 5),
                        "lon": round(lon, 5),
                        "sog": None if isinstance(sog, float) and np.isnan(sog) else round(float(sog), 2),
                        "group": group,
                        "status": status,
                        "ice": round(float(np.clip(ice_base + rng.normal(0, 0.5), 0, 10)), 2),
                        "mu": None if isinstance(mu, float) and np.isnan(mu) else round(mu, 2),
                    }
                )
    records = pd.DataFrame(rows)

    grid_lat = np.arange(lat_box[0], lat_box[1] + 1e-9, 0.5)
    grid_lon = np.arange(lon_box[0], lon_box[1] + 1e-9, 0.5)
    glat, glon = np.meshgrid(grid_lat, grid_lon, indexing="ij")
    intensity = rng.lognormal(-1.0, 1.0, glat.size)
    whale_grid = pd.DataFrame(
        {
            "lat": np.round(glat.ravel(), 2),
            "lon": np.round(glon.ravel(), 2),
            "intensity": np.round(intensity, 6),
        }
    )
    return records, whale_grid
