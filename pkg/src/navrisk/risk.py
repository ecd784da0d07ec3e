"""Latent risk objective for vessel speed decisions.

A speed choice v (knots) at one observation incurs a duration-weighted risk
made of three normalized components:

    risk(v) = dt * ( 0.5*(v - mu)^2 / c_delta
                     + theta_w * whale*(v + v^m) / c_w
                     + theta_i * (ice*v^2 + relu(v - v_safe)^2) / c_i )

where mu is the baseline (expected) speed, whale is the local whale-encounter
intensity, ice is sea-ice concentration in tenths [0, 10], v_safe is an
ice-dependent safe-speed benchmark, and (theta_w, theta_i) are per-group
trade-off weights on the unit simplex.  The exponent m in {1, 2, 3} controls
how acoustic disturbance scales with speed.

Candidate speeds live on a uniform grid {0, step, ..., v_max}.  The model-
implied optimal speed is the grid argmin of risk (ties broken toward the
slower speed), and the suboptimality gap is the risk of the observed speed
(evaluated exactly, not snapped to the grid) minus the grid minimum.

All functions here are pure and operate on plain numpy arrays; DataFrame
handling lives in :mod:`navrisk.validation`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

V_MAX_DEFAULT = 40.0
GRID_STEP_DEFAULT = 0.5
SCALE_FLOOR = 1e-8
VALID_EXPONENTS = (1, 2, 3)

# Rows per chunk for grid-shaped intermediates; bounds peak memory at roughly
# chunk_rows * n_grid * 8 bytes per matrix without affecting results.
CHUNK_ROWS_DEFAULT = 1 << 18


def speed_power(v, m):
    """v**m by repeated multiplication, for m in {1, 2, 3}.

    Avoids the transcendental pow so scalar and vectorized evaluations agree
    bit for bit.
    """
    if m == 1:
        return v
    if m == 2:
        return v * v
    if m == 3:
        return v * v * v
    raise ValueError(f"acoustic exponent must be one of {VALID_EXPONENTS}, got {m!r}")


def v_safe(ice_tenths):
    """Safe-speed benchmark (knots) for ice concentration in tenths [0, 10].

    Piecewise linear: 19 - (14/5)*I up to I = 5, then 5 - (1/5)*(I - 5).
    Continuous at I = 5 and non-increasing on [0, 10].
    """
    ice = np.asarray(ice_tenths, dtype=float)
    if not np.all(np.isfinite(ice)):
        raise ValueError("ice concentration must be finite")
    if np.any(ice < 0.0) or np.any(ice > 10.0):
        raise ValueError("ice concentration must lie in [0, 10] tenths")
    out = np.where(ice <= 5.0, 19.0 - (14.0 / 5.0) * ice, 5.0 - (1.0 / 5.0) * (ice - 5.0))
    if np.isscalar(ice_tenths) or np.ndim(ice_tenths) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SpeedGrid:
    """Uniform candidate-speed grid {0, step, ..., v_max} in knots."""

    v_max: float = V_MAX_DEFAULT
    step: float = GRID_STEP_DEFAULT

    def __post_init__(self):
        if not (self.v_max > 0 and self.step > 0):
            raise ValueError("v_max and step must be positive")
        n = self.v_max / self.step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("v_max must be an integer multiple of step")

    @property
    def values(self) -> np.ndarray:
        n = int(round(self.v_max / self.step))
        return np.linspace(0.0, self.v_max, n + 1)


@dataclass(frozen=True)
class RiskWeights:
    """Per-group simplex weights (theta_w, theta_i) plus acoustic exponent."""

    theta_w: np.ndarray
    theta_i: np.ndarray
    m: int = 2

    def __post_init__(self):
        tw = np.atleast_1d(np.asarray(self.theta_w, dtype=float))
        ti = np.atleast_1d(np.asarray(self.theta_i, dtype=float))
        object.__setattr__(self, "theta_w", tw)
        object.__setattr__(self, "theta_i", ti)
        if tw.shape != ti.shape:
            raise ValueError("theta_w and theta_i must have the same length")
        if np.any(tw < 0) or np.any(ti < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.abs(tw + ti - 1.0) > 1e-12):
            raise ValueError("weights must sum to 1 per group (within 1e-12)")
        if self.m not in VALID_EXPONENTS:
            raise ValueError(f"acoustic exponent must be one of {VALID_EXPONENTS}")

    @property
    def n_groups(self) -> int:
        return self.theta_w.shape[0]


@dataclass(frozen=True)
class ScalingConstants:
    """Empirical normalizers for the three risk components."""

    c_delta: float
    c_w: float
    c_i: float

    def __post_init__(self):
        for name in ("c_delta", "c_w", "c_i"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    def to_dict(self) -> dict:
        return {"c_delta": self.c_delta, "c_w": self.c_w, "c_i": self.c_i}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingConstants":
        return cls(c_delta=float(d["c_delta"]), c_w=float(d["c_w"]), c_i=float(d["c_i"]))


@dataclass(frozen=True)
class ObservationArrays:
    """Column arrays of analysis-ready observations, aligned by row."""

    v_obs: np.ndarray
    dt: np.ndarray
    mu: np.ndarray
    whale: np.ndarray
    ice_tenths: np.ndarray
    vsafe: np.ndarray
    group_index: np.ndarray

    def __post_init__(self):
        n = self.v_obs.shape[0]
        for name in ("dt", "mu", "whale", "ice_tenths", "vsafe", "group_index"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"column {name} has mismatched length")

    @property
    def n(self) -> int:
        return self.v_obs.shape[0]

    @property
    def n_groups(self) -> int:
        return int(self.group_index.max()) + 1 if self.n else 0


def quantile(values, q):
    """Linear-interpolation quantile of a 1-D array (the one method used
    throughout)."""
    return float(np.quantile(np.asarray(values, dtype=float), q, method="linear"))


def compute_scaling(obs: ObservationArrays, m: int, floor: float = SCALE_FLOOR) -> ScalingConstants:
    """95th-percentile normalizers of the observed component distributions.

    Each constant is floored at ``floor`` so a component that is identically
    zero in the data cannot produce a zero divisor.
    """
    if obs.n == 0:
        raise ValueError("cannot compute scaling constants from zero observations")
    v = obs.v_obs
    dev2 = (v - obs.mu) ** 2
    whale_term = obs.whale * (v + speed_power(v, m))
    exceed = np.maximum(v - obs.vsafe, 0.0)
    ice_term = obs.ice_tenths * (v * v) + exceed * exceed
    return ScalingConstants(
        c_delta=max(quantile(dev2, 0.95), floor),
        c_w=max(quantile(whale_term, 0.95), floor),
        c_i=max(quantile(ice_term, 0.95), floor),
    )


def risk_eval(
    v,
    *,
    dt,
    mu,
    whale,
    ice_tenths,
    theta_w,
    theta_i,
    scaling: ScalingConstants,
    m: int = 2,
    vsafe=None,
):
    """Duration-weighted risk of speed ``v`` at one observation.

    ``v`` may be a scalar or an array of candidate speeds; observation fields
    are scalars.  ``vsafe`` is derived from the ice concentration when not
    supplied.
    """
    if vsafe is None:
        vsafe = v_safe(ice_tenths)
    v = np.asarray(v, dtype=float)
    base = 0.5 * (v - mu) ** 2 / scaling.c_delta
    whale_part = whale * (v + speed_power(v, m)) / scaling.c_w
    exceed = np.maximum(v - vsafe, 0.0)
    ice_part = (ice_tenths * (v * v) + exceed * exceed) / scaling.c_i
    out = dt * (base + theta_w * whale_part + theta_i * ice_part)
    if out.ndim == 0:
        return float(out)
    return out


def _risk_grid_chunk(obs: ObservationArrays, sl: slice, grid_values: np.ndarray,
                     scaling: ScalingConstants, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-component grid risk matrices (rows = observations, cols = speeds),
    each already weighted by dt.  Mirrors :func:`risk_eval` term for term."""
    v = grid_values[np.newaxis, :]
    dt = obs.dt[sl, np.newaxis]
    mu = obs.mu[sl, np.newaxis]
    whale = obs.whale[sl, np.newaxis]
    ice = obs.ice_tenths[sl, np.newaxis]
    vsafe = obs.vsafe[sl, np.newaxis]
    base = 0.5 * (v - mu) ** 2 / scaling.c_delta
    whale_part = whale * (v + speed_power(v, m)) / scaling.c_w
    exceed = np.maximum(v - vsafe, 0.0)
    ice_part = (ice * (v * v) + exceed * exceed) / scaling.c_i
    return dt * base, dt * whale_part, dt * ice_part


def _risk_obs_parts(obs: ObservationArrays, scaling: ScalingConstants, m: int):
    """Component risks of the observed speeds, dt-weighted, as three vectors."""
    v = obs.v_obs
    base = 0.5 * (v - obs.mu) ** 2 / scaling.c_delta
    whale_part = obs.whale * (v + speed_power(v, m)) / scaling.c_w
    exceed = np.maximum(v - obs.vsafe, 0.0)
    ice_part = (obs.ice_tenths * (v * v) + exceed * exceed) / scaling.c_i
    return obs.dt * base, obs.dt * whale_part, obs.dt * ice_part


def _chunk_slices(n: int, chunk_rows: int):
    for start in range(0, n, chunk_rows):
        yield slice(start, min(start + chunk_rows, n))


def optimal_speeds(
    obs: ObservationArrays,
    weights: RiskWeights,
    scaling: ScalingConstants,
    grid: SpeedGrid,
    chunk_rows: int = CHUNK_ROWS_DEFAULT,
) -> np.ndarray:
    """Model-implied optimal speed per observation: the grid argmin of the
    risk objective, ties broken toward the lowest speed."""
    values = grid.values
    out = np.empty(obs.n, dtype=float)
    tw_all = weights.theta_w[obs.group_index]
    ti_all = weights.theta_i[obs.group_index]
    for sl in _chunk_slices(obs.n, chunk_rows):
        base, whale_part, ice_part = _risk_grid_chunk(obs, sl, values, scaling, weights.m)
        risk = base + tw_all[sl, np.newaxis] * whale_part + ti_all[sl, np.newaxis] * ice_part
        # argmin returns the first minimum, i.e. the lowest speed on ties
        out[sl] = values[np.argmin(risk, axis=1)]
    return out


def subopt_gaps(
    obs: ObservationArrays,
    weights: RiskWeights,
    scaling: ScalingConstants,
    grid: SpeedGrid,
    chunk_rows: int = CHUNK_ROWS_DEFAULT,
) -> np.ndarray:
    """Raw suboptimality gap per observation: risk of the observed speed
    (evaluated exactly, off-grid) minus the grid minimum.

    May be slightly negative when the observed speed lies between grid points
    and beats every candidate; the magnitude is bounded by the objective's
    variation over one grid step.  Callers that need the estimation loss
    clamp at zero.
    """
    values = grid.values
    out = np.empty(obs.n, dtype=float)
    tw_all = weights.theta_w[obs.group_index]
    ti_all = weights.theta_i[obs.group_index]
    base_o, whale_o, ice_o = _risk_obs_parts(obs, scaling, weights.m)
    risk_obs = base_o + tw_all * whale_o + ti_all * ice_o
    for sl in _chunk_slices(obs.n, chunk_rows):
        base, whale_part, ice_part = _risk_grid_chunk(obs, sl, values, scaling, weights.m)
        risk = base + tw_all[sl, np.newaxis] * whale_part + ti_all[sl, np.newaxis] * ice_part
        out[sl] = risk_obs[sl] - risk.min(axis=1)
    return out


class GapEvaluator:
    """Repeated evaluation of the aggregate clamped gap across trade-off
    weights, with the weight-independent pieces precomputed once.

    Risk is affine in theta_w for fixed m (theta_i = 1 - theta_w), so each
    chunk stores P = dt*(base + ice_part) and Q = dt*(whale_part - ice_part)
    on the grid, giving risk = P + theta_w * Q.  Sums accumulate in fixed
    chunk order for run-to-run determinism.
    """

    def __init__(
        self,
        obs: ObservationArrays,
        scaling: ScalingConstants,
        grid: SpeedGrid,
        m: int,
        chunk_rows: int = CHUNK_ROWS_DEFAULT,
    ):
        self.obs = obs
        self.scaling = scaling
        self.grid = grid
        self.m = m
        self._slices = list(_chunk_slices(obs.n, chunk_rows))
        values = grid.values
        self._p_grid = []
        self._q_grid = []
        for sl in self._slices:
            base, whale_part, ice_part = _risk_grid_chunk(obs, sl, values, scaling, m)
            self._p_grid.append(base + ice_part)
            self._q_grid.append(whale_part - ice_part)
        base_o, whale_o, ice_o = _risk_obs_parts(obs, scaling, m)
        self._p_obs = base_o + ice_o
        self._q_obs = whale_o - ice_o

    def gaps(self, theta_w: np.ndarray) -> np.ndarray:
        """Raw per-observation gaps under per-group whale weights."""
        tw = np.asarray(theta_w, dtype=float)[self.obs.group_index]
        out = np.empty(self.obs.n, dtype=float)
        for sl, p, q in zip(self._slices, self._p_grid, self._q_grid):
            risk = p + tw[sl, np.newaxis] * q
            out[sl] = (self._p_obs[sl] + tw[sl] * self._q_obs[sl]) - risk.min(axis=1)
        return out

    def total_clamped_gap(self, theta_w: np.ndarray) -> float:
        """Sum over observations of max(gap, 0)."""
        tw = np.asarray(theta_w, dtype=float)[self.obs.group_index]
        total = 0.0
        for sl, p, q in zip(self._slices, self._p_grid, self._q_grid):
            risk = p + tw[sl, np.newaxis] * q
            gap = (self._p_obs[sl] + tw[sl] * self._q_obs[sl]) - risk.min(axis=1)
            total += float(np.maximum(gap, 0.0).sum())
        if not np.isfinite(total):
            bad = np.flatnonzero(~np.isfinite(self.gaps(theta_w)))
            where = f" at observation index {bad[0]}" if bad.size else ""
            raise FloatingPointError(f"non-finite suboptimality gap{where}")
        return total
