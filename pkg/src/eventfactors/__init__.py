"""Dynamic factor models for high-dimensional recurrent-event panels.

The package fits a low-rank, time-varying intensity model to event
times observed for many units and many event types.  Event counts are
first turned into kernel-smoothed occurrence rates on a time grid; a
factor surface is then estimated by projected gradient ascent on a
pseudo-likelihood, with the factor rank chosen by an information
criterion.  Companion modules simulate ground-truth panels, rotate
fitted factors toward sparse loadings, and score fits against a known
truth.
"""

from .analyze import (
    ErrorReport,
    estimation_error,
    factor_regression,
    loading_error,
    total_variation,
    total_variation_surface,
    variability_quartiles,
)
from .events import (
    EventDataError,
    EventPanel,
    load_events,
    panel_from_json,
    panel_to_json,
    save_events,
)
from .kernels import (
    KernelSpec,
    abs_moment,
    evaluation_interval,
    kernel_value,
    kernel_weight,
    make_grid,
    normalizer,
    smoothed_curve_value,
    smoothed_rate,
)
from .likelihood import (
    SmoothedWeights,
    gradients,
    log_pseudo_likelihood,
    precompute_weights,
    x_surface,
)
from .model import (
    ExpLink,
    FactorModel,
    get_link,
    load_model,
    max_row_norm,
    project_rows,
    save_model,
)
from .optimize import (
    FitConfig,
    FitError,
    FitResult,
    auto_bandwidth,
    fit,
    fit_from_weights,
    initialize,
    projected_gradient_residual,
)
from .rotate import (
    RotationError,
    RotationResult,
    aggregate_factors,
    principal_angles,
    rotate_fit,
    rotate_model,
    varimax,
    varimax_criterion,
)
from .selection import (
    PenaltySpec,
    SelectConfig,
    SelectionResult,
    information_criterion,
    penalty_value,
    select_rank,
    select_rank_from_weights,
)
from .simulate import (
    BlockStructure,
    SimulationError,
    TrueModel,
    TruthSpec,
    generate_truth,
    make_blocks,
    power_third_phi,
    rate_envelope,
    simulate_dependent,
    simulate_independent,
    truth_from_json,
    truth_to_json,
)
from .static import StaticFit, fit_static, load_static, save_static
from .study import (
    StudyCell,
    StudyConfig,
    run_replication,
    run_study,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "BlockStructure",
    "ErrorReport",
    "EventDataError",
    "EventPanel",
    "ExpLink",
    "FactorModel",
    "FitConfig",
    "FitError",
    "FitResult",
    "KernelSpec",
    "PenaltySpec",
    "RotationError",
    "RotationResult",
    "SelectConfig",
    "SelectionResult",
    "SimulationError",
    "SmoothedWeights",
    "StaticFit",
    "StudyCell",
    "StudyConfig",
    "TrueModel",
    "TruthSpec",
    "abs_moment",
    "aggregate_factors",
    "auto_bandwidth",
    "estimation_error",
    "evaluation_interval",
    "factor_regression",
    "fit",
    "fit_from_weights",
    "fit_static",
    "generate_truth",
    "get_link",
    "gradients",
    "information_criterion",
    "initialize",
    "kernel_value",
    "kernel_weight",
    "load_events",
    "load_model",
    "load_static",
    "loading_error",
    "log_pseudo_likelihood",
    "make_blocks",
    "make_grid",
    "max_row_norm",
    "normalizer",
    "panel_from_json",
    "panel_to_json",
    "penalty_value",
    "power_third_phi",
    "precompute_weights",
    "principal_angles",
    "project_rows",
    "projected_gradient_residual",
    "rate_envelope",
    "rotate_fit",
    "rotate_model",
    "run_replication",
    "run_study",
    "save_events",
    "save_model",
    "save_static",
    "select_rank",
    "select_rank_from_weights",
    "simulate_dependent",
    "simulate_independent",
    "smoothed_curve_value",
    "smoothed_rate",
    "summarize",
    "total_variation",
    "total_variation_surface",
    "truth_from_json",
    "truth_to_json",
    "variability_quartiles",
    "varimax",
    "varimax_criterion",
    "x_surface",
]
