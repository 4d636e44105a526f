"""Parameter identification for self-regulated first-order dynamics.

Estimates the decay time, gain and equilibrium of signals that relax
toward an excitation-shifted attractor, from noisy panel data, using a
two-step procedure: derivative estimation (sliding-window filter or
smoothing spline) followed by a pooled mixed-effects regression.  Also
ships the simulation benchmark used to validate the estimator.
"""

from .deriv import (DerivativeRows, GllaConfig, SmoothingSpline,
                    SplineConfig, fit_smoothing_spline, glla_rows,
                    glla_weights, spar_to_penalty, spline_rows)
from .errors import (ConvergenceError, DataFormatError, EstimationError,
                     SelfRegError, ValidationError)
from .model import (FirstOrderParams, integrate, propagate_hold,
                    propagate_ramp, solve_homogeneous, solve_step)
from .pipeline import (FitResult, IndividualEstimate, SmoothingSearch,
                       make_config, optimize_smoothing, r_squared,
                       two_step_fit)
from .regress import (RegressionData, RegressionFit, fit_gee, fit_lmm,
                      fit_ols, fit_regression)
from .simulate import (ExcitationShape, IndividualSeries, Panel,
                       SimulationCondition, draw_individual_params,
                       generate_panel, make_excitation)
from .study import (ConditionRun, ConditionSummary, ReplicationRecord,
                    StudyResult, reference_conditions, run_condition,
                    run_replication, run_study, summarize)

__version__ = "0.1.0"

__all__ = [
    "ConditionRun",
    "ConditionSummary",
    "ConvergenceError",
    "DataFormatError",
    "DerivativeRows",
    "EstimationError",
    "ExcitationShape",
    "FirstOrderParams",
    "FitResult",
    "GllaConfig",
    "IndividualEstimate",
    "IndividualSeries",
    "Panel",
    "RegressionData",
    "RegressionFit",
    "ReplicationRecord",
    "SelfRegError",
    "SimulationCondition",
    "SmoothingSearch",
    "SmoothingSpline",
    "SplineConfig",
    "StudyResult",
    "ValidationError",
    "draw_individual_params",
    "fit_gee",
    "fit_lmm",
    "fit_ols",
    "fit_regression",
    "fit_smoothing_spline",
    "generate_panel",
    "glla_rows",
    "glla_weights",
    "integrate",
    "make_config",
    "make_excitation",
    "optimize_smoothing",
    "propagate_hold",
    "propagate_ramp",
    "r_squared",
    "reference_conditions",
    "run_condition",
    "run_replication",
    "run_study",
    "solve_homogeneous",
    "solve_step",
    "spar_to_penalty",
    "spline_rows",
    "summarize",
    "two_step_fit",
    "__version__",
]
