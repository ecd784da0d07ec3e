"""Movement-segment construction from raw AIS-style position records.

Raw records are linked into pseudo-trajectories: chains of consecutive
positions sharing one (vessel, spatial cell, daily time index) key, ordered
by timestamp.  Each consecutive pair becomes a segment assigned to its ending
record, with a Haversine displacement, an elapsed time, and an observed speed
(the reported speed over ground when a valid one exists, otherwise distance
over time).  Sub-threshold segments are treated as stationary, and speeds are
capped to remove AIS artifacts.  Environmental covariates are then joined to
produce one analysis-ready observation per segment.

Expected raw columns (rename foreign headers via ``column_map``):

======================  =======================================================
mmsi                    vessel identifier
cell_id                 spatial grid cell identifier
time_id                 daily time index (integer)
timestamp               record time, parseable to UTC; sub-second truncated
lat, lon                position in degrees
sog                     reported speed over ground, knots (optional)
group                   vessel-group label (optional)
status                  navigational-status code 0-15 (optional)
ice                     sea-ice concentration, tenths or fraction (see
                        ``ice_unit``)
<baseline column>       precomputed baseline speed, knots (``baseline_col``)
======================  =======================================================
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import risk
from .validation import ConfigError, DataError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
DT_MIN_HOURS = 0.01
D_MIN_KM = 0.05
SOG_SENTINEL_MAX = 102.2
KM_PER_NAUTICAL_MILE = 1.852

GROUP_KEY = ["mmsi", "cell_id", "time_id"]
RAW_REQUIRED = GROUP_KEY + ["timestamp", "lat", "lon", "ice"]
RAW_OPTIONAL = ["sog", "cog", "group", "status", "wind", "bathymetry", "dist_coast"]

#: Chunk size for the brute-force nearest-neighbor join.
_NN_CHUNK = 4096


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between coordinate pairs in degrees.

    Accepts scalars or arrays; uses Earth radius 6371.0 km.
    """
    lat1 = np.asarray(lat1, dtype=float)
    lon1 = np.asarray(lon1, dtype=float)
    lat2 = np.asarray(lat2, dtype=float)
    lon2 = np.asarray(lon2, dtype=float)
    for lat in (lat1, lat2):
        if np.any(np.abs(lat) > 90.0):
            raise DataError("latitude out of range [-90, 90]")
    for lon in (lon1, lon2):
        if np.any(np.abs(lon) > 180.0):
            raise DataError("longitude out of range [-180, 180]")
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = np.radians(lat2 - lat1)
    dlam = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    out = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class PrepareStats:
    """Bookkeeping counters emitted by the ingestion pipeline."""

    n_records: int = 0
    n_dropped_nonpositive_dt: int = 0
    n_segments: int = 0
    n_excluded_covariates: int = 0
    n_observations: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_dropped_nonpositive_dt": self.n_dropped_nonpositive_dt,
            "n_segments": self.n_segments,
            "n_excluded_covariates": self.n_excluded_covariates,
            "n_observations": self.n_observations,
            "warnings": list(self.warnings),
        }


def read_records(path, column_map: dict | None = None) -> pd.DataFrame:
    """Load a raw record CSV, renaming columns per ``column_map``
    (canonical name -> column name in the file)."""
    df = pd.read_csv(path)
    if column_map:
        rename = {src: canon for canon, src in column_map.items() if src in df.columns}
        df = df.rename(columns=rename)
    return df


def _validate_records(records: pd.DataFrame, baseline_col: str) -> pd.DataFrame:
    missing = [c for c in RAW_REQUIRED if c not in records.columns]
    if missing:
        raise DataError(f"raw records are missing required columns: {missing}")
    if baseline_col not in records.columns:
        raise DataError(f"baseline column {baseline_col!r} not found in records")
    df = records.copy()
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True, errors="raise").dt.floor("s")
    for col in ("lat", "lon"):
        df[col] = pd.to_numeric(df[col], errors="coerce")
    if df["lat"].isna().any() or df["lon"].isna().any():
        raise DataError("non-numeric coordinates in raw records")
    if (df["lat"].abs() > 90).any():
        raise DataError("latitude out of range [-90, 90]")
    if (df["lon"].abs() > 180).any():
        raise DataError("longitude out of range [-180, 180]")
    if "sog" in df.columns:
        df["sog"] = pd.to_numeric(df["sog"], errors="coerce")
    return df


def _valid_sog(df: pd.DataFrame) -> np.ndarray:
    """Reported speeds usable as observed speeds: present, nonnegative, and
    below the AIS sentinel range."""
    if "sog" not in df.columns:
        return np.zeros(len(df), dtype=bool)
    sog = df["sog"].to_numpy(dtype=float)
    return np.isfinite(sog) & (sog >= 0.0) & (sog <= SOG_SENTINEL_MAX)


def build_segments(
    records: pd.DataFrame,
    dt_min: float = DT_MIN_HOURS,
    d_min: float = D_MIN_KM,
    v_max: float = risk.V_MAX_DEFAULT,
    *,
    baseline_col: str = "mu",
    stats: PrepareStats | None = None,
) -> pd.DataFrame:
    """Link consecutive records within each (mmsi, cell_id, time_id) group
    into segments and derive observed speeds.

    Records must be sorted by timestamp within each group (out-of-order input
    raises :class:`DataError`).  Segments with non-positive elapsed time
    (duplicate timestamps) are dropped and counted; isolated records produce
    no segment.  The returned frame has one row per segment, assigned to the
    ending record, with ``distance_km``, ``dt_hours``, ``v_obs``,
    ``trajectory_id`` and ``month`` added.
    """
    stats = stats if stats is not None else PrepareStats()
    df = _validate_records(records, baseline_col)
    stats.n_records = len(df)

    # Stable sort on the group key only: timestamp order within each group is
    # the caller's contract and is verified below.
    df = df.sort_values(GROUP_KEY, kind="stable").reset_index(drop=True)

    same_group = np.ones(len(df), dtype=bool)
    for col in GROUP_KEY:
        same_group &= df[col].eq(df[col].shift()).to_numpy()
    if len(df):
        same_group[0] = False

    ts = df["timestamp"].astype("int64").to_numpy() / 1e9  # seconds
    dt_hours = np.diff(ts, prepend=np.nan) / 3600.0
    if np.any(same_group & (dt_hours < 0)):
        raise DataError("records are not sorted by timestamp within a trajectory group")

    lat = df["lat"].to_numpy()
    lon = df["lon"].to_numpy()
    dist = np.zeros(len(df))
    if len(df) > 1:
        dist[1:] = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])

    linked = same_group & (dt_hours > 0)
    stats.n_dropped_nonpositive_dt = int(np.sum(same_group & (dt_hours <= 0)))

    seg = df.loc[linked].copy()
    seg["dt_hours"] = dt_hours[linked]
    seg["distance_km"] = dist[linked]

    derived = (seg["distance_km"] / seg["dt_hours"]).to_numpy() / KM_PER_NAUTICAL_MILE
    stationary = (seg["dt_hours"].to_numpy() < dt_min) | (seg["distance_km"].to_numpy() < d_min)
    derived = np.where(stationary, 0.0, derived)

    use_sog = _valid_sog(seg)
    v = np.where(use_sog, seg["sog"].to_numpy(dtype=float) if "sog" in seg.columns else 0.0, derived)
    seg["v_obs"] = np.minimum(v, v_max)

    seg["trajectory_id"] = (
        seg["mmsi"].astype(str) + ":" + seg["cell_id"].astype(str) + ":" + seg["time_id"].astype(str)
    )
    seg["month"] = seg["timestamp"].dt.month.astype(np.int64)
    stats.n_segments = len(seg)
    return seg.reset_index(drop=True)


def _nearest_intensity(
    obs_lat: np.ndarray,
    obs_lon: np.ndarray,
    obs_month: np.ndarray,
    whale_grid: pd.DataFrame,
) -> np.ndarray:
    """Nearest-neighbor whale intensity by great-circle distance.

    Grid nodes are matched on ``time_key`` when the grid carries one
    (otherwise the surface is static); ties go to the lowest grid-node index.
    Observations with no matching time key get NaN.
    """
    if len(whale_grid) == 0:
        raise ConfigError("whale intensity grid is empty")
    for col in ("lat", "lon", "intensity"):
        if col not in whale_grid.columns:
            raise ConfigError(f"whale grid is missing column {col!r}")
    inten = whale_grid["intensity"].to_numpy(dtype=float)
    if np.any(~np.isfinite(inten)) or np.any(inten < 0):
        raise ConfigError("whale grid intensities must be finite and nonnegative")

    out = np.full(obs_lat.shape[0], np.nan)
    keyed = "time_key" in whale_grid.columns and whale_grid["time_key"].notna().any()
    keys = whale_grid["time_key"].to_numpy() if keyed else None

    def assign(rows: np.ndarray, nodes: pd.DataFrame):
        nlat = nodes["lat"].to_numpy(dtype=float)
        nlon = nodes["lon"].to_numpy(dtype=float)
        nval = nodes["intensity"].to_numpy(dtype=float)
        for start in range(0, rows.size, _NN_CHUNK):
            chunk = rows[start : start + _NN_CHUNK]
            d = haversine(
                obs_lat[chunk][:, np.newaxis],
                obs_lon[chunk][:, np.newaxis],
                nlat[np.newaxis, :],
                nlon[np.newaxis, :],
            )
            # first minimum = lowest node index within the original grid order
            out[chunk] = nval[np.argmin(d, axis=1)]

    if keyed:
        for key in pd.unique(keys):
            nodes = whale_grid.loc[keys == key]
            rows = np.flatnonzero(obs_month == key)
            if rows.size:
                assign(rows, nodes)
    else:
        assign(np.arange(obs_lat.shape[0]), whale_grid)
    return out


def assign_covariates(
    segments: pd.DataFrame,
    whale_grid: pd.DataFrame,
    *,
    baseline_col: str = "mu",
    ice_unit: str = "tenths",
    stats: PrepareStats | None = None,
) -> pd.DataFrame:
    """Join whale intensity, baseline speed, and ice onto segments, apply the
    zero-speed baseline rule, and drop rows with unusable covariates.

    Stationary observations keep their duration (they still accumulate
    exposure) but have their baseline forced to zero so sitting still is
    never penalized as a deviation.
    """
    stats = stats if stats is not None else PrepareStats()
    if ice_unit not in ("tenths", "fraction"):
        raise ConfigError(f"ice_unit must be 'tenths' or 'fraction', got {ice_unit!r}")

    obs = segments.copy()
    obs["whale"] = _nearest_intensity(
        obs["lat"].to_numpy(dtype=float),
        obs["lon"].to_numpy(dtype=float),
        obs["month"].to_numpy(),
        whale_grid,
    )

    mu = pd.to_numeric(obs[baseline_col], errors="coerce").to_numpy(dtype=float)
    v = obs["v_obs"].to_numpy(dtype=float)
    # Stationary vessels are consistent with expected behavior by definition.
    mu = np.where(v == 0.0, 0.0, mu)
    obs["mu"] = mu

    ice = pd.to_numeric(obs["ice"], errors="coerce").to_numpy(dtype=float)
    if ice_unit == "fraction":
        ice = ice * 10.0
    obs["ice_tenths"] = ice

    usable = (
        np.isfinite(obs["mu"].to_numpy())
        & np.isfinite(obs["whale"].to_numpy())
        & np.isfinite(ice)
        & (ice >= 0.0)
        & (ice <= 10.0)
    )
    stats.n_excluded_covariates = int((~usable).sum())
    if len(obs) and stats.n_excluded_covariates / len(obs) > 0.5:
        msg = (
            f"excluded {stats.n_excluded_covariates} of {len(obs)} segments "
            "(>50%) for missing or invalid covariates"
        )
        stats.warnings.append(msg)
        logger.warning(msg)
    obs = obs.loc[usable].copy()

    obs["v_safe"] = risk.v_safe(obs["ice_tenths"].to_numpy())
    stats.n_observations = len(obs)
    return obs


#: Columns written to prepared-observation outputs, in order.  Optional
#: passthrough columns are kept only when present in the input.
OUTPUT_COLUMNS = [
    "trajectory_id",
    "mmsi",
    "cell_id",
    "time_id",
    "timestamp",
    "month",
    "lat",
    "lon",
    "group",
    "status",
    "v_obs",
    "dt",
    "mu",
    "whale",
    "ice_tenths",
    "v_safe",
]


def prepare_observations(
    records: pd.DataFrame,
    whale_grid: pd.DataFrame,
    *,
    baseline_col: str = "mu",
    ice_unit: str = "tenths",
    dt_min: float = DT_MIN_HOURS,
    d_min: float = D_MIN_KM,
    v_max: float = risk.V_MAX_DEFAULT,
) -> tuple[pd.DataFrame, PrepareStats]:
    """Full ingestion pipeline: raw records to analysis-ready observations.

    Records are sorted canonically first (position breaks timestamp ties), so
    the output is identical for any input row order.  Returns the observation
    table (sorted by trajectory and timestamp) and the pipeline counters.
    """
    stats = PrepareStats()
    df = _validate_records(records, baseline_col)
    df = df.sort_values(GROUP_KEY + ["timestamp", "lat", "lon"], kind="stable").reset_index(drop=True)
    seg = build_segments(
        df, dt_min=dt_min, d_min=d_min, v_max=v_max, baseline_col=baseline_col, stats=stats
    )
    obs = assign_covariates(
        seg, whale_grid, baseline_col=baseline_col, ice_unit=ice_unit, stats=stats
    )
    obs = obs.rename(columns={"dt_hours": "dt"})
    cols = [c for c in OUTPUT_COLUMNS if c in obs.columns]
    obs = obs[cols].sort_values(["trajectory_id", "timestamp"], kind="stable").reset_index(drop=True)
    return obs, stats


def diagnostics(segments: pd.DataFrame) -> dict:
    """Distribution report for segment displacement, elapsed time, and
    positive speeds: the quantities used to justify the stationary
    thresholds.  Quantiles use linear interpolation between order statistics.
    """
    if len(segments) == 0:
        return {"n_segments": 0}

    def q_report(values: np.ndarray) -> dict:
        return {
            "p50": risk.quantile(values, 0.50),
            "p75": risk.quantile(values, 0.75),
            "p90": risk.quantile(values, 0.90),
            "p99": risk.quantile(values, 0.99),
            "p999": risk.quantile(values, 0.999),
        }

    dist = segments["distance_km"].to_numpy(dtype=float)
    dt = segments["dt_hours"].to_numpy(dtype=float)
    v = segments["v_obs"].to_numpy(dtype=float)
    report = {
        "n_segments": int(len(segments)),
        "displacement_km": q_report(dist),
        "elapsed_hours": q_report(dt),
        "fraction_displacement_below_50m": float(np.mean(dist < 0.05)),
    }
    positive = v[v > 0]
    report["positive_speed_knots"] = q_report(positive) if positive.size else None
    return report
