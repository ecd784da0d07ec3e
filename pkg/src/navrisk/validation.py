"""Schema and input validation for analysis-ready observation tables.

A prepared-observation table is a pandas DataFrame with one row per movement
segment, carrying at minimum the columns in :data:`CORE_COLUMNS`.  Grouping
columns (``group`` for vessel-group labels, ``status`` for navigational-status
codes) and spatial keys (``cell_id``, ``month``) are optional and only needed
by the operations that use them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import risk


class DataError(ValueError):
    """Malformed or contract-violating input data."""


class ConfigError(ValueError):
    """Incoherent configuration or missing required inputs."""


#: Numeric columns every prepared-observation table must carry.
CORE_COLUMNS = ("v_obs", "dt", "mu", "whale", "ice_tenths", "v_safe")

#: Identifier column linking observations of one pseudo-trajectory.
TRAJECTORY_COLUMN = "trajectory_id"

#: Grouping columns understood by the estimator (`--group-by` choices).
GROUP_COLUMNS = {"vessel_group": "group", "status": "status"}

V_SAFE_CHECK_TOL = 1e-9


def check_observations(df: pd.DataFrame, v_max: float = risk.V_MAX_DEFAULT) -> pd.DataFrame:
    """Validate a prepared-observation table and return a normalized copy.

    Checks every row-level invariant: speeds within [0, v_max], positive
    durations, nonnegative whale intensity, ice in [0, 10] tenths, zero
    baseline wherever the observed speed is zero, and a safe-speed column
    consistent with the ice concentration.  The safe-speed column is
    recomputed exactly (after the consistency check) so downstream math never
    sees drift from text round-tripping.
    """
    missing = [c for c in CORE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"observations are missing required columns: {missing}")
    if TRAJECTORY_COLUMN not in df.columns:
        raise DataError(f"observations are missing the {TRAJECTORY_COLUMN!r} column")

    out = df.copy()
    for col in CORE_COLUMNS:
        out[col] = pd.to_numeric(out[col], errors="coerce").astype(float)
        bad = int(out[col].isna().sum())
        if bad:
            raise DataError(f"column {col!r} has {bad} missing or non-numeric values")

    v = out["v_obs"].to_numpy()
    if np.any(v < 0) or np.any(v > v_max):
        raise DataError(f"v_obs must lie in [0, {v_max}]")
    if np.any(out["dt"].to_numpy() <= 0):
        raise DataError("dt must be strictly positive")
    if np.any(out["whale"].to_numpy() < 0):
        raise DataError("whale intensity must be nonnegative")
    ice = out["ice_tenths"].to_numpy()
    if np.any(ice < 0) or np.any(ice > 10):
        raise DataError("ice_tenths must lie in [0, 10]")
    mu = out["mu"].to_numpy()
    if np.any(mu[v == 0] != 0):
        raise DataError("rows with v_obs = 0 must have mu = 0")

    expected_vsafe = risk.v_safe(ice)
    if np.any(np.abs(out["v_safe"].to_numpy() - expected_vsafe) > V_SAFE_CHECK_TOL):
        raise DataError("v_safe column is inconsistent with ice_tenths")
    out["v_safe"] = expected_vsafe
    return out


@dataclass(frozen=True)
class GroupedObservations:
    """Validated observations paired with a categorical group encoding."""

    arrays: risk.ObservationArrays
    group_labels: list
    group_col: str

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    def counts(self) -> np.ndarray:
        return np.bincount(self.arrays.group_index, minlength=self.n_groups)


def to_arrays(df: pd.DataFrame, group_col: str = "group") -> GroupedObservations:
    """Extract numeric arrays and a stable group encoding from a validated
    table.  Group labels are sorted, so the index assignment does not depend
    on row order."""
    if group_col not in df.columns:
        raise DataError(
            f"grouping column {group_col!r} not present; available: {list(df.columns)}"
        )
    labels = sorted(df[group_col].astype(str).unique())
    index_of = {g: i for i, g in enumerate(labels)}
    group_index = df[group_col].astype(str).map(index_of).to_numpy(dtype=np.int64)
    arrays = risk.ObservationArrays(
        v_obs=df["v_obs"].to_numpy(dtype=float),
        dt=df["dt"].to_numpy(dtype=float),
        mu=df["mu"].to_numpy(dtype=float),
        whale=df["whale"].to_numpy(dtype=float),
        ice_tenths=df["ice_tenths"].to_numpy(dtype=float),
        vsafe=df["v_safe"].to_numpy(dtype=float),
        group_index=group_index,
    )
    return GroupedObservations(arrays=arrays, group_labels=labels, group_col=group_col)
