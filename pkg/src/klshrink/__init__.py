"""Bayes predictive densities for normal models under shrinkage priors.

The package builds predictive densities through the marginal-ratio form,
estimates their Kullback-Leibler risk by Monte Carlo, and checks the
identities and superharmonicity conditions that make them minimax.
"""

from .errors import DomainError, InputError, KLShrinkError, NumericalError, ParameterError
from .marginals import (
    evaluate,
    grad_log_marginal,
    laplacian_ratio,
    log_laplacian,
    log_marginal,
    log_marginal_batch,
    posterior_mean,
    radial_profile,
    sqrt_laplacian_ratio,
)
from .model import (
    Custom,
    Gaussian,
    GaussianModel,
    Harmonic,
    InverseGammaLike,
    Mixture,
    Rescaled,
    ScaleMixture,
    Strawderman,
    Subspace,
    Uniform,
    make_model,
    multivariate_t,
    validate_prior,
)
from .predictive import (
    PredictiveDensity,
    density_slice,
    log_density_bayes,
    log_density_plugin,
    log_density_u,
    predictive_mean,
)
from .risk import (
    RiskEstimate,
    bayes_risk_gap,
    check_eq25,
    kl_loss,
    kl_risk,
    quadratic_risk,
    risk_difference,
    risk_plugin_closed_form,
    risk_sweep,
    risk_u_closed_form,
    stein_ure,
)
from .shrinkage import multiple_shrinkage, recenter, toward_subspace
from .verify import (
    ScanReport,
    canonical_decomposition,
    check_identity_18_19,
    check_lemma1,
    check_theorem2,
    corollary1_rate,
    heat_residual,
    superharmonic_scan,
)

__version__ = "0.1.0"

__all__ = [
    "bayes_risk_gap",
    "canonical_decomposition",
    "check_eq25",
    "check_identity_18_19",
    "check_lemma1",
    "check_theorem2",
    "corollary1_rate",
    "Custom",
    "density_slice",
    "DomainError",
    "evaluate",
    "Gaussian",
    "GaussianModel",
    "grad_log_marginal",
    "Harmonic",
    "heat_residual",
    "InputError",
    "InverseGammaLike",
    "kl_loss",
    "kl_risk",
    "KLShrinkError",
    "laplacian_ratio",
    "log_density_bayes",
    "log_density_plugin",
    "log_density_u",
    "log_laplacian",
    "log_marginal",
    "log_marginal_batch",
    "make_model",
    "Mixture",
    "multiple_shrinkage",
    "multivariate_t",
    "NumericalError",
    "ParameterError",
    "posterior_mean",
    "predictive_mean",
    "PredictiveDensity",
    "quadratic_risk",
    "radial_profile",
    "recenter",
    "Rescaled",
    "risk_difference",
    "risk_plugin_closed_form",
    "risk_sweep",
    "risk_u_closed_form",
    "RiskEstimate",
    "ScaleMixture",
    "ScanReport",
    "sqrt_laplacian_ratio",
    "stein_ure",
    "Strawderman",
    "Subspace",
    "superharmonic_scan",
    "toward_subspace",
    "Uniform",
    "validate_prior",
]
