"""Markov transition matrix estimation from aggregate distribution snapshots.

Given snapshot pairs (mu_t, nu_t) of a particle population before and after
one Markov step, the estimator solves a jointly convex entropic
optimal-transport program over the per-pair transport plans and recovers
the transition matrix by row-normalizing their sum.  The package also ships
dual-feasibility and uniqueness diagnostics, a simulation toolkit, canned
error-curve experiments, and a CLI tying them together.
"""

from .duality import (
    DualFeasibilityReport,
    DualScalings,
    UniquenessCertificate,
    check_dual_feasibility,
    dual_objective,
    duality_gap,
    extract_dual_scalings,
    primal_span_certificate,
    uniqueness_certificate,
)
from .errors import (
    AggmarkovError,
    EmptyInputError,
    FileFormatError,
    InfeasibleError,
    InfeasibleSupportError,
    InsufficientPointsError,
    InvalidTransitionError,
    MarginalMismatchError,
    MassMismatchError,
    NegativeCountError,
    NonFiniteError,
    NonnegativityError,
    NonPositiveValueError,
    NotConvergedError,
    NotRankOneError,
    ReducibleChainError,
    ShapeMismatchError,
    ZeroRowError,
)
from .estimator import (
    EstimateResult,
    EstimateStatus,
    EstimatorConfig,
    estimate,
    objective_original,
    objective_value,
)
from .experiments import (
    CellOutcome,
    CellRow,
    ErrorCurve,
    ExperimentConfig,
    SummaryRow,
    build_error_curve,
    cell_seed,
    default_experiment_config,
    fit_loglog_slope,
    plot_error_curve,
    run_cell,
    run_experiment,
    summarize,
    write_error_curve_csv,
)
from .model import (
    AggregatePlan,
    Distribution,
    MarginalPair,
    ObservationSet,
    TransitionMatrix,
    TransportPlan,
    build_observation_set,
    frobenius_error,
    independent_coupling,
    kl_divergence,
    recover_transition,
)
from .simulate import (
    MixingStats,
    SimulationConfig,
    benchmark_matrix,
    log_transition_probability,
    mixing_stats,
    random_stochastic_matrix,
    sample_empirical_marginals,
    stationary_distribution,
    tv_distance,
)
from .sinkhorn import (
    ScalingPair,
    SinkhornReport,
    SinkhornStatus,
    kl_project,
    plan_from_scalings,
    sinkhorn_sweep,
)

__version__ = "0.1.0"
