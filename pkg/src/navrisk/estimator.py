"""Trade-off weight estimation by inverse optimization.

Observed speeds are treated as approximately optimal for the latent risk
objective in :mod:`navrisk.risk`.  The per-group whale-vs-ice weights are
recovered by minimizing the aggregate clamped suboptimality gap

    L(eta) = sum_n max(gap_n(theta(eta)), 0) + ridge * ||eta||^2

over unconstrained per-group logits eta, where theta_w = 1/(1+e^eta) and
theta_i = 1 - theta_w lie on the unit simplex by construction.  The search
uses a bounded derivative-free trust-region method (quadratic local models,
no gradients), matching the objective's piecewise-smooth, cheap-to-evaluate
structure.

:class:`TradeoffEstimator` wraps the procedure in the scikit-learn estimator
protocol (``fit`` / ``predict`` / ``score`` / ``get_params``); the plain
functions underneath are usable without it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import Bounds, minimize
from scipy.special import expit
from sklearn.base import BaseEstimator

from . import risk
from .validation import ConfigError, DataError, check_observations, to_arrays

ETA_BOUND_DEFAULT = 10.0
RIDGE_DEFAULT = 1e-2
MAX_EVALS_DEFAULT = 2000
REL_TOL_DEFAULT = 1e-8
M_CANDIDATES = (1, 2, 3)

FIT_FORMAT = "navrisk-fit"
FIT_VERSION = 1


def eta_to_theta_w(eta) -> np.ndarray:
    """Whale weight from the logit: theta_w = 1/(1+e^eta), stably."""
    return expit(-np.asarray(eta, dtype=float))


def logit_to_weights(eta, m: int = 2) -> risk.RiskWeights:
    """Map per-group logits to simplex weights.

    theta_i is computed as 1 - theta_w, so the simplex constraint holds
    exactly rather than to rounding error.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if not np.all(np.isfinite(eta)):
        raise ConfigError("eta must be finite")
    tw = eta_to_theta_w(eta)
    return risk.RiskWeights(theta_w=tw, theta_i=1.0 - tw, m=m)


@dataclass(frozen=True)
class EstimationConfig:
    """Hyperparameters of one estimation run.

    ``ridge`` is the penalty weight on ||eta||^2 (written lambda in the
    objective; renamed because of the Python keyword).  ``init`` of None
    means the neutral start eta = 0.
    """

    ridge: float = RIDGE_DEFAULT
    grid: risk.SpeedGrid = field(default_factory=risk.SpeedGrid)
    m: int = 2
    max_evals: int = MAX_EVALS_DEFAULT
    rel_tol: float = REL_TOL_DEFAULT
    eta_bound: float = ETA_BOUND_DEFAULT
    init: np.ndarray | None = None
    seed: int = 0
    multi_start: bool = False
    chunk_rows: int = risk.CHUNK_ROWS_DEFAULT

    def __post_init__(self):
        if not (np.isfinite(self.ridge) and self.ridge >= 0):
            raise ConfigError("ridge penalty must be nonnegative and finite")
        if self.m not in risk.VALID_EXPONENTS:
            raise ConfigError(f"m must be one of {risk.VALID_EXPONENTS}, got {self.m!r}")
        if self.rel_tol <= 0 or self.eta_bound <= 0:
            raise ConfigError("rel_tol and eta_bound must be positive")
        if self.max_evals < 3:
            raise ConfigError("max_evals must be at least 3")


def penalized_objective(
    eta,
    obs: risk.ObservationArrays,
    config: EstimationConfig,
    scaling: risk.ScalingConstants,
) -> float:
    """Aggregate clamped gap plus ridge penalty at one eta.

    Convenience form that precomputes nothing; inside the optimizer the
    equivalent evaluation reuses a :class:`~navrisk.risk.GapEvaluator`.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    evaluator = risk.GapEvaluator(obs, scaling, config.grid, config.m, config.chunk_rows)
    return _penalized(eta, evaluator, config.ridge)


def _penalized(eta: np.ndarray, evaluator: risk.GapEvaluator, ridge: float) -> float:
    total = evaluator.total_clamped_gap(eta_to_theta_w(eta))
    return total + ridge * float(eta @ eta)


@dataclass(frozen=True)
class FitResult:
    """Fitted weights plus everything needed to reuse or audit the fit."""

    eta_hat: np.ndarray
    weights: risk.RiskWeights
    objective_value: float
    n_obs: int
    scaling: risk.ScalingConstants
    m: int
    per_group_obs_counts: dict
    group_labels: list
    group_col: str
    converged: bool
    n_evals: int
    config_echo: dict

    def to_json_dict(self) -> dict:
        return {
            "format": FIT_FORMAT,
            "version": FIT_VERSION,
            "group_col": self.group_col,
            "groups": list(self.group_labels),
            "eta": [float(x) for x in self.eta_hat],
            "theta_w": [float(x) for x in self.weights.theta_w],
            "theta_i": [float(x) for x in self.weights.theta_i],
            "m": int(self.m),
            "objective_value": float(self.objective_value),
            "n_obs": int(self.n_obs),
            "per_group_obs_counts": {str(k): int(v) for k, v in self.per_group_obs_counts.items()},
            "scaling": self.scaling.to_dict(),
            "converged": bool(self.converged),
            "n_evals": int(self.n_evals),
            "config": self.config_echo,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FitResult":
        if d.get("format") != FIT_FORMAT:
            raise DataError(f"not a fit-result document (format={d.get('format')!r})")
        if d.get("version") != FIT_VERSION:
            raise DataError(f"fit-result version {d.get('version')!r} not supported")
        eta = np.asarray(d["eta"], dtype=float)
        weights = logit_to_weights(eta, m=int(d["m"]))
        return cls(
            eta_hat=eta,
            weights=weights,
            objective_value=float(d["objective_value"]),
            n_obs=int(d["n_obs"]),
            scaling=risk.ScalingConstants.from_dict(d["scaling"]),
            m=int(d["m"]),
            per_group_obs_counts=dict(d["per_group_obs_counts"]),
            group_labels=list(d["groups"]),
            group_col=d["group_col"],
            converged=bool(d["converged"]),
            n_evals=int(d["n_evals"]),
            config_echo=dict(d.get("config", {})),
        )


def arrays_for_fit(df: pd.DataFrame, fit: FitResult, v_max: float | None = None) -> risk.ObservationArrays:
    """Observation arrays with group indices aligned to a fit's group order.

    Rows whose group label the fit has never seen raise :class:`DataError`.
    """
    v_max = fit.config_echo.get("v_max", risk.V_MAX_DEFAULT) if v_max is None else v_max
    checked = check_observations(df, v_max=v_max)
    grouped = to_arrays(checked, group_col=fit.group_col)
    index_of = {label: i for i, label in enumerate(fit.group_labels)}
    unseen = [g for g in grouped.group_labels if g not in index_of]
    if unseen:
        raise DataError(f"groups not present in the fit: {unseen}")
    remap = np.array([index_of[g] for g in grouped.group_labels], dtype=np.int64)
    return dataclasses.replace(grouped.arrays, group_index=remap[grouped.arrays.group_index])


def _minimize_once(objective, x0: np.ndarray, bound: float, max_evals: int, rel_tol: float):
    """One bounded derivative-free run; returns (x, f, n_evals, success)."""
    best = {"x": x0.copy(), "f": objective(x0)}
    calls = [1]

    def tracked(x):
        f = objective(x)
        calls[0] += 1
        if f < best["f"]:
            best["f"] = f
            best["x"] = np.array(x, dtype=float)
        return f

    res = minimize(
        tracked,
        x0,
        method="cobyqa",
        bounds=Bounds(-bound, bound),
        options={
            "maxfev": max_evals,
            "final_tr_radius": max(np.sqrt(rel_tol), 1e-8),
        },
    )
    # best-seen iterate can only improve on the solver's report
    if res.fun < best["f"]:
        best["f"] = float(res.fun)
        best["x"] = np.asarray(res.x, dtype=float)
    return best["x"], float(best["f"]), calls[0], bool(res.success)


def fit_weights(
    grouped_arrays: risk.ObservationArrays,
    config: EstimationConfig,
    *,
    group_labels: list,
    group_col: str,
    scaling: risk.ScalingConstants | None = None,
) -> FitResult:
    """Core fitting routine on prebuilt arrays.

    Groups listed in ``group_labels`` but absent from the data keep eta = 0;
    only represented groups enter the optimization.  Scaling constants are
    computed from the data once (or taken from ``scaling`` to reuse a frozen
    set) and held fixed during the search.
    """
    obs = grouped_arrays
    n_groups = len(group_labels)
    if obs.n == 0:
        raise DataError("cannot fit with zero observations")
    counts = np.bincount(obs.group_index, minlength=n_groups)
    active = np.flatnonzero(counts > 0)
    if config.max_evals < active.size + 2:
        raise ConfigError(
            f"max_evals={config.max_evals} is below the minimum {active.size + 2} "
            f"for {active.size} active groups"
        )

    if scaling is None:
        scaling = risk.compute_scaling(obs, config.m)
    evaluator = risk.GapEvaluator(obs, scaling, config.grid, config.m, config.chunk_rows)

    init_full = np.zeros(n_groups) if config.init is None else np.asarray(config.init, dtype=float)
    if init_full.shape != (n_groups,):
        raise ConfigError(f"init must have one entry per group ({n_groups})")
    init_full = np.clip(init_full, -config.eta_bound, config.eta_bound)

    # Inactive groups contribute nothing to the gaps; pin them at neutral.
    eta_template = np.zeros(n_groups)

    def objective_active(x_active: np.ndarray) -> float:
        eta = eta_template.copy()
        eta[active] = x_active
        return _penalized(eta, evaluator, config.ridge)

    eta_hat = eta_template.copy()

    starts = [init_full[active]]
    if config.multi_start:
        starts.append(np.clip(init_full[active] + 2.0, -config.eta_bound, config.eta_bound))
        starts.append(np.clip(init_full[active] - 2.0, -config.eta_bound, config.eta_bound))

    best_x, best_f, total_evals, converged = None, np.inf, 0, False
    for x0 in starts:
        x, f, n_evals, success = _minimize_once(
            objective_active, x0, config.eta_bound, config.max_evals, config.rel_tol
        )
        total_evals += n_evals
        if f < best_f:
            best_x, best_f, converged = x, f, success

    eta_hat[active] = best_x
    weights = logit_to_weights(eta_hat, m=config.m)
    return FitResult(
        eta_hat=eta_hat,
        weights=weights,
        objective_value=best_f,
        n_obs=obs.n,
        scaling=scaling,
        m=config.m,
        per_group_obs_counts={g: int(c) for g, c in zip(group_labels, counts)},
        group_labels=list(group_labels),
        group_col=group_col,
        converged=converged,
        n_evals=total_evals,
        config_echo={
            "ridge": config.ridge,
            "grid_step": config.grid.step,
            "v_max": config.grid.v_max,
            "m": config.m,
            "max_evals": config.max_evals,
            "rel_tol": config.rel_tol,
            "eta_bound": config.eta_bound,
            "seed": config.seed,
            "multi_start": config.multi_start,
        },
    )


class TradeoffEstimator(BaseEstimator):
    """Recover per-group whale-vs-ice trade-off weights from observed speeds.

    Parameters mirror :class:`EstimationConfig`.  ``fit`` takes a prepared
    observation table (see :mod:`navrisk.ingest`) carrying the ``group_col``
    column; ``predict`` returns the model-implied optimal speed per row;
    ``score`` returns the negative mean clamped suboptimality gap, so larger
    is better.
    """

    def __init__(
        self,
        m: int = 2,
        ridge: float = RIDGE_DEFAULT,
        grid_step: float = risk.GRID_STEP_DEFAULT,
        v_max: float = risk.V_MAX_DEFAULT,
        max_evals: int = MAX_EVALS_DEFAULT,
        rel_tol: float = REL_TOL_DEFAULT,
        eta_bound: float = ETA_BOUND_DEFAULT,
        group_col: str = "group",
        seed: int = 0,
        multi_start: bool = False,
        chunk_rows: int = risk.CHUNK_ROWS_DEFAULT,
    ):
        self.m = m
        self.ridge = ridge
        self.grid_step = grid_step
        self.v_max = v_max
        self.max_evals = max_evals
        self.rel_tol = rel_tol
        self.eta_bound = eta_bound
        self.group_col = group_col
        self.seed = seed
        self.multi_start = multi_start
        self.chunk_rows = chunk_rows

    def _config(self, init=None) -> EstimationConfig:
        return EstimationConfig(
            ridge=self.ridge,
            grid=risk.SpeedGrid(v_max=self.v_max, step=self.grid_step),
            m=self.m,
            max_evals=self.max_evals,
            rel_tol=self.rel_tol,
            eta_bound=self.eta_bound,
            init=init,
            seed=self.seed,
            multi_start=self.multi_start,
            chunk_rows=self.chunk_rows,
        )

    def fit(self, X: pd.DataFrame, y=None, *, groups=None, eta_init=None, scaling=None):
        """Fit on a prepared observation table.

        ``groups`` optionally fixes the group universe (labels absent from
        the data keep eta = 0); ``eta_init`` warm-starts the search;
        ``scaling`` reuses frozen scaling constants instead of recomputing
        them from ``X``.
        """
        checked = check_observations(X, v_max=self.v_max)
        grouped = to_arrays(checked, group_col=self.group_col)
        if groups is None:
            labels = grouped.group_labels
            arrays = grouped.arrays
        else:
            labels = [str(g) for g in groups]
            index_of = {g: i for i, g in enumerate(labels)}
            unseen = [g for g in grouped.group_labels if g not in index_of]
            if unseen:
                raise DataError(f"data contains groups outside the declared universe: {unseen}")
            remap = np.array([index_of[g] for g in grouped.group_labels], dtype=np.int64)
            arrays = dataclasses.replace(
                grouped.arrays, group_index=remap[grouped.arrays.group_index]
            )
        config = self._config(init=eta_init)
        result = fit_weights(
            arrays, config, group_labels=labels, group_col=self.group_col, scaling=scaling
        )
        self.result_ = result
        self.groups_ = result.group_labels
        self.eta_ = result.eta_hat
        self.weights_ = result.weights
        self.theta_w_ = result.weights.theta_w
        self.theta_i_ = result.weights.theta_i
        self.objective_value_ = result.objective_value
        self.scaling_ = result.scaling
        self.converged_ = result.converged
        self.n_obs_ = result.n_obs
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise DataError("estimator is not fitted; call fit first")

    def predict(self, X: pd.DataFrame) -> np.ndarray:
        """Model-implied optimal speed (knots) for each row of ``X``."""
        self._check_fitted()
        arrays = arrays_for_fit(X, self.result_, v_max=self.v_max)
        grid = risk.SpeedGrid(v_max=self.v_max, step=self.grid_step)
        return risk.optimal_speeds(arrays, self.weights_, self.scaling_, grid, self.chunk_rows)

    def score(self, X: pd.DataFrame, y=None) -> float:
        """Negative mean clamped suboptimality gap under the fitted weights."""
        self._check_fitted()
        arrays = arrays_for_fit(X, self.result_, v_max=self.v_max)
        grid = risk.SpeedGrid(v_max=self.v_max, step=self.grid_step)
        evaluator = risk.GapEvaluator(arrays, self.scaling_, grid, self.m, self.chunk_rows)
        return -evaluator.total_clamped_gap(self.theta_w_) / arrays.n


def select_m(
    df: pd.DataFrame,
    config: EstimationConfig | None = None,
    m_candidates=M_CANDIDATES,
    *,
    group_col: str = "group",
    v_max: float | None = None,
) -> tuple[int, pd.DataFrame]:
    """Fit once per acoustic exponent and pick the smallest-objective m.

    Scaling constants are recomputed inside each fit (c_w depends on m).
    Exact ties break toward the smallest candidate.  Returns the winner and a
    one-row-per-candidate table of objectives.
    """
    config = config if config is not None else EstimationConfig()
    v_max = config.grid.v_max if v_max is None else v_max
    checked = check_observations(df, v_max=v_max)
    grouped = to_arrays(checked, group_col=group_col)

    rows = []
    candidates = sorted(m_candidates)
    for m in candidates:
        cfg = dataclasses.replace(config, m=m)
        try:
            result = fit_weights(
                grouped.arrays, cfg,
                group_labels=grouped.group_labels, group_col=group_col,
            )
        except Exception as exc:
            exc.args = (f"fit failed for m={m}: {exc}",)
            raise
        rows.append(
            {
                "m": m,
                "objective": result.objective_value,
                "converged": result.converged,
                "n_evals": result.n_evals,
            }
        )
    table = pd.DataFrame(rows)
    objectives = table["objective"].to_numpy()
    if not np.all(np.isfinite(objectives)):
        raise FloatingPointError("non-finite objective in exponent selection")
    # first minimum in ascending candidate order = smallest m on ties
    m_star = int(table["m"].iloc[int(np.argmin(objectives))])
    return m_star, table
