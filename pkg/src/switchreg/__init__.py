"""Switching nonparametric regression: one observed series, several
latent smooth regimes, estimated by alternating conditional
maximizations of a penalized likelihood.

Two formulations of the regime curves are available, curvature-penalized
cubic splines and squared-exponential-kernel smoothers, under either
independent or Markov-dependent states. Smoothing parameters come from
weighted cross-validation, the number of regimes from an information
criterion, and the latent parameters carry observed-information
standard errors.
"""

from .basis import SplineBasis, build_basis, design_matrix, kernel_gram, penalty_matrix
from .engine import (
    FitConfig,
    FitResult,
    JSelection,
    aic_value,
    criterion,
    em_fit,
    fit_series,
    init_function_estimate,
    init_residual_based,
    make_initial,
    select_j_aic,
    select_lambda_gcv,
    smooth_spline_gcv,
)
from .errors import SwitchregError, SwitchregWarning
from .inference import estep_iid, estep_markov, joint_posterior
from .io import (
    estimate_signal_variance,
    jitter_duplicates,
    load_csv,
    motorcycle_series,
    write_fit_outputs,
    write_sim_outputs,
)
from .model import (
    IIDStates,
    KernelFunctions,
    MarkovStates,
    NoiseModel,
    ObservedSeries,
    Responsibilities,
    SplineFunctions,
    Theta,
    validate_theta,
)
from .simulate import SimStudyReport, run_study
from .stderrs import InformationMatrix, info_iid, info_markov2

__version__ = "0.1.0"

__all__ = [
    "SplineBasis",
    "build_basis",
    "design_matrix",
    "kernel_gram",
    "penalty_matrix",
    "FitConfig",
    "FitResult",
    "JSelection",
    "aic_value",
    "criterion",
    "em_fit",
    "fit_series",
    "init_function_estimate",
    "init_residual_based",
    "make_initial",
    "select_j_aic",
    "select_lambda_gcv",
    "smooth_spline_gcv",
    "SwitchregError",
    "SwitchregWarning",
    "estep_iid",
    "estep_markov",
    "joint_posterior",
    "estimate_signal_variance",
    "jitter_duplicates",
    "load_csv",
    "motorcycle_series",
    "write_fit_outputs",
    "write_sim_outputs",
    "IIDStates",
    "KernelFunctions",
    "MarkovStates",
    "NoiseModel",
    "ObservedSeries",
    "Responsibilities",
    "SplineFunctions",
    "Theta",
    "validate_theta",
    "SimStudyReport",
    "run_study",
    "InformationMatrix",
    "info_iid",
    "info_markov2",
    "__version__",
]
