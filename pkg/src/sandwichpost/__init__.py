"""Sandwich-adjusted Bayesian inference for composite likelihoods.

The package provides:

- dense SPD matrix utilities (``matrixkit``),
- Gaussian Matern field simulation and constraints (``fields``),
- the composite log-likelihood abstraction and numeric differentiation
  (``likelihoods``),
- priors, posterior mode finding and sampling (``inference``),
- Godambe-sandwich estimation and the affine posterior adjustment
  (``adjust``),
- the spatial conditional extremes model with global simulation
  (``condextremes``, ``globalsim``, ``empirical``),
- reproducible simulation studies and a command line (``experiments``,
  ``cli``).
"""

from .adjust import (
    PipelineResult,
    SandwichEstimate,
    adjust_draws,
    build_C,
    estimate_H,
    estimate_J,
    full_adjustment_pipeline,
    godambe,
)
from .exceptions import (
    ConfigurationError,
    EmptyCompositeError,
    EvaluationError,
    NotSpdError,
    NumericDomainError,
    SandwichPostError,
)
from .fields import (
    GridGmrfSpec,
    MaternParams,
    SiteSet,
    add_nugget,
    constrain_by_b_modulation,
    constrain_conditioning,
    constrain_subtraction,
    matern_corr,
    matern_cov,
    sample_field,
    subtraction_corr,
)
from .inference import (
    CredibleInterval,
    GammaPrior,
    GaussianLinkPrior,
    LogPosterior,
    ModeResult,
    PcJointRangeSdPrior,
    PosteriorDraws,
    credible_interval,
    find_mode,
    laplace_sample,
    log_posterior,
    log_score,
    mcmc_sample,
)
from .likelihoods import (
    CompositeLikelihood,
    CompositeTerm,
    NeighborStructure,
    ParamVector,
    block_composite_gaussian,
    eval_composite,
    gaussian_fixed_var_loglik,
    numeric_gradient,
    numeric_hessian,
    student_t_sample,
)
from .matrixkit import MatrixSqrtFactor, SpdMatrix, mvn_sample, spd_solve, spd_sqrt

__version__ = "0.1.0"
