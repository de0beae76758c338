"""Detection toolkit for non-convergence of stochastic approximation to
unstable equilibria.

The package simulates recursions of the form

    X_{n+1} - X_n = gamma_{n+1} * G_n + c_{n+1} * (eps_{n+1} + r_{n+1}),

splits Jacobians at candidate traps into repulsive/contracting blocks,
estimates the drift/noise rate constants of the step-size schedule, checks
the hypotheses under which trapping has probability zero, and measures how
closely trajectories shadow the associated deterministic flow.
"""

from .errors import (
    AmbiguousSpectrumError,
    BlowUpError,
    ConditioningError,
    ConfigError,
    DegenerateScheduleError,
    DegenerateTimeChangeError,
    DivergentTailError,
    DomainExitError,
    InsufficientHorizonError,
    InsufficientRecordsError,
    SingularDenominatorError,
    SpectrumSignError,
    StuckWalkError,
    TrapcheckError,
)
from .sequences import (
    RateConstants,
    Schedule,
    SequenceSpec,
    rate_constants,
)
from .spectral import (
    AdaptedNorm,
    TrapSplit,
    adapted_inner_product,
    default_tolerance,
    project_pm,
    split_jacobian,
)
from .models import (
    LinearModel,
    ManifoldK,
    MeanFieldVrrwModel,
    Model,
    SyntheticModel,
    TrapInfo,
    VrrwConfig,
    VrrwWalkModel,
    control_models,
    synthetic_field,
    transition_distribution,
    vrrw_field,
    vrrw_jacobian,
    vrrw_walk_step,
)
from .engine import (
    CaptureSpec,
    DecomposedIncrements,
    EnsembleSummary,
    StepRecord,
    Trajectory,
    combine_increment,
    empirical_increment_decomposition,
    monte_carlo,
    run,
    step,
)
from .hypotheses import (
    ConditionResult,
    HypothesisReport,
    THEOREM_IDS,
    check_drift_sign,
    check_jump_moments,
    check_noise_excitation,
    check_rate_condition,
    check_remainder,
    check_tail_noise_condition,
    make_constants,
)
from .flow import (
    AptResult,
    EnsembleRates,
    ManifoldRateResult,
    TimeChangedPath,
    apt_deficit,
    ensemble_apt_deficit,
    ensemble_manifold_rate,
    flow_path,
    integrate_flow,
    manifold_rate,
    time_change,
)
from .cli import ExperimentConfig, canonical_json, config_hash, main, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AdaptedNorm",
    "AmbiguousSpectrumError",
    "AptResult",
    "BlowUpError",
    "CaptureSpec",
    "ConditionResult",
    "ConditioningError",
    "ConfigError",
    "DecomposedIncrements",
    "DegenerateScheduleError",
    "DegenerateTimeChangeError",
    "DivergentTailError",
    "DomainExitError",
    "EnsembleRates",
    "EnsembleSummary",
    "ExperimentConfig",
    "HypothesisReport",
    "InsufficientHorizonError",
    "InsufficientRecordsError",
    "LinearModel",
    "ManifoldK",
    "ManifoldRateResult",
    "MeanFieldVrrwModel",
    "Model",
    "RateConstants",
    "Schedule",
    "SequenceSpec",
    "SingularDenominatorError",
    "SpectrumSignError",
    "StepRecord",
    "StuckWalkError",
    "SyntheticModel",
    "THEOREM_IDS",
    "TimeChangedPath",
    "Trajectory",
    "TrapInfo",
    "TrapSplit",
    "TrapcheckError",
    "VrrwConfig",
    "VrrwWalkModel",
    "adapted_inner_product",
    "apt_deficit",
    "canonical_json",
    "check_drift_sign",
    "check_jump_moments",
    "check_noise_excitation",
    "check_rate_condition",
    "check_remainder",
    "check_tail_noise_condition",
    "combine_increment",
    "config_hash",
    "control_models",
    "default_tolerance",
    "empirical_increment_decomposition",
    "ensemble_apt_deficit",
    "ensemble_manifold_rate",
    "flow_path",
    "integrate_flow",
    "main",
    "make_constants",
    "manifold_rate",
    "monte_carlo",
    "project_pm",
    "rate_constants",
    "run",
    "run_experiment",
    "split_jacobian",
    "step",
    "synthetic_field",
    "time_change",
    "transition_distribution",
    "vrrw_field",
    "vrrw_jacobian",
    "vrrw_walk_step",
]
