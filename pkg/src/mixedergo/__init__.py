"""Gibbs sampling for Gaussian variance-components models under improper
conditionally-conjugate priors, with pre-run certification that the
posterior is proper and that the chain converges geometrically."""

from .errors import (
    CertificateUnavailable,
    DimensionMismatch,
    DomainError,
    GridTooCoarse,
    InvalidShape,
    MixedErgoError,
    NonFinite,
    RankDeficientX,
    SingularQ,
    TooFewSamples,
    ValidationFailed,
)
from .model import (
    DesignSummary,
    GlmmDesign,
    PriorSpec,
    ValidationReport,
    build_oneway,
    build_twoway,
    compute_sse,
    load_design,
    load_prior,
    save_design,
    save_prior,
    summarize_design,
    validate_model,
)
from .kernel import (
    ParamState,
    RngStream,
    default_initial_state,
    gibbs_step,
    inverse_gamma_logpdf,
    log_unnormalized_posterior,
    sample_sigma2,
    sample_theta,
    theta_conditional_moments,
)
from .ergodicity import (
    DriftCertificate,
    ErgodicityReport,
    OnewayCheck,
    WitnessSearch,
    build_report,
    check_corollary1,
    check_oneway,
    check_theorem1,
    digamma,
    drift_certificate,
    estimate_K,
    gamma_ratio,
    h_norm,
    lhs_condition_e,
    lhs_condition_u,
    search_witness_s,
)
from .mcmc import (
    ChainConfig,
    ChainRun,
    batch_means_mcse,
    ergodic_average,
    load_run,
    run_chain,
    save_run,
    truncate_run,
)
from .oracle import (
    QuadratureSpec,
    check_chisq_moment_bound,
    check_expectation_bounds,
    check_lemma_a1,
    mc_check_drift,
    sigma2_marginal_quadrature,
)

__version__ = "0.1.0"
