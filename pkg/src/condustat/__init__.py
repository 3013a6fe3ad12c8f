"""Conditional U-statistics: kernel-weighted estimation, penalized parametric fits,
finite-sample bounds and Monte Carlo checks."""

from .asymptotics import (
    GenerativeModel,
    get_model,
    h_matrix,
    mc_conditional_moment,
    rho_squared,
    tilde_h_matrix,
    truncated_gaussian_model,
)
from .bounds import (
    BoundConstants,
    berk_bound,
    beta_error_bound,
    derive_constants,
    existence_probability,
    min_sample_size_for_existence,
    nk_deviation_bound,
    theta_deviation_bound,
    worked_example_constants,
)
from .estimator import (
    CondEstimate,
    EstimatorUndefined,
    ObservationSample,
    TupleSet,
    compute_nk,
    enumerate_tuples,
    estimate_theta,
    estimate_theta_batch,
    predict_theta,
)
from .functionals import (
    BasisModel,
    UStatFunctional,
    builtin_functional,
    check_identifiability,
    eval_basis,
    get_link,
)
from .harness import ExperimentConfig, default_config, generate_sample, run_experiment
from .kernels import (
    SmoothingKernel,
    epanechnikov,
    gaussian,
    get_kernel,
    kernel_eval,
    scaled_kernel_eval,
    uniform,
    verify_kernel_order,
)
from .regression import (
    build_design,
    build_response,
    fit_adaptive_lasso,
    fit_lasso,
    restricted_eigenvalue,
    two_step_fit,
)

__version__ = "0.1.0"
