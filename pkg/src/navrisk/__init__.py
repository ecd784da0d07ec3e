"""navrisk: vessel speed decisions reconstructed as risk trade-offs.

Builds movement segments from AIS-style records, evaluates a three-part
speed-risk objective (deviation from baseline, whale disturbance, ice
hazard), recovers group-specific whale-vs-ice trade-off weights by inverse
optimization, quantifies their uncertainty with a stratified trajectory
bootstrap, and runs counterfactual weight scenarios.
"""

__version__ = "0.1.0"

from .estimator import (
    EstimationConfig,
    FitResult,
    TradeoffEstimator,
    fit_weights,
    logit_to_weights,
    penalized_objective,
    select_m,
)
from .ingest import (
    PrepareStats,
    assign_covariates,
    build_segments,
    diagnostics,
    haversine,
    prepare_observations,
    read_records,
)
from .risk import (
    GapEvaluator,
    ObservationArrays,
    RiskWeights,
    ScalingConstants,
    SpeedGrid,
    compute_scaling,
    optimal_speeds,
    risk_eval,
    speed_power,
    subopt_gaps,
    v_safe,
)
from .scenarios import (
    PerturbationSpec,
    RatioGridConfig,
    perturb_weights,
    ratio_grid,
    sensitivity_report,
    validation_report,
)
from .synth import SynthConfig, generate, make_raw_sample
from .uncertainty import (
    BootstrapConfig,
    BootstrapSummary,
    bootstrap_weights,
    stratified_sample,
    stratum_share_error,
)
from .validation import (
    ConfigError,
    DataError,
    GroupedObservations,
    check_observations,
    to_arrays,
)

__all__ = [
    "__version__",
    "BootstrapConfig",
    "BootstrapSummary",
    "ConfigError",
    "DataError",
    "EstimationConfig",
    "FitResult",
    "GapEvaluator",
    "GroupedObservations",
    "ObservationArrays",
    "PerturbationSpec",
    "PrepareStats",
    "RatioGridConfig",
    "RiskWeights",
    "ScalingConstants",
    "SpeedGrid",
    "SynthConfig",
    "TradeoffEstimator",
    "assign_covariates",
    "bootstrap_weights",
    "build_segments",
    "check_observations",
    "compute_scaling",
    "diagnostics",
    "fit_weights",
    "generate",
    "haversine",
    "logit_to_weights",
    "make_raw_sample",
    "optimal_speeds",
    "penalized_objective",
    "perturb_weights",
    "prepare_observations",
    "ratio_grid",
    "read_records",
    "risk_eval",
    "select_m",
    "sensitivity_report",
    "speed_power",
    "stratified_sample",
    "stratum_share_error",
    "subopt_gaps",
    "to_arrays",
    "v_safe",
    "validation_report",
]
