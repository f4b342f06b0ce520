"""Particle MCMC for state-space models.

Kernels: bootstrap-filter PMMH, conditional SMC with backward sampling,
classical particle Gibbs, marginalized particle Gibbs, and exact
Kalman-backed MH/Barker baselines, plus the diagnostics and experiment
tooling to compare their acceptance rates as the particle count grows.
"""

from .bootstrap import FilterOutput, bootstrap_filter
from .csmc import (
    CsmcConfig,
    CsmcResult,
    CsmcTarget,
    FullPathTailEvaluator,
    INVARIANT_TERMINAL_SELECTIONS,
    MarkovTailEvaluator,
    ModelTarget,
    ParticleSystem,
    TERMINAL_FORCED,
    TERMINAL_STANDARD,
    backward_sampling_pass,
    csmc_kernel,
)
from .diagnostics import ChainSummary, acceptance_rate, ess, iact, summarize_chain
from .kalman import KalmanCache, ffbs_sample, kalman_filter, kalman_loglik, smoother_moments
from .marginal import (
    AugmentedState,
    CLOSED_FORM_PRIOR_MIXTURE,
    CachedTailEvaluator,
    ConfigurationError,
    DiscreteGridPair,
    GaussianRandomWalkPair,
    IndexPosterior,
    MIXTURE_VARIANTS,
    MarginalTarget,
    POSTERIOR_MIXTURE,
    PRIOR_MIXTURE,
    PathDensityCache,
    ProposalPair,
    index_prior,
    marginal_eta,
    marginal_potential,
    mixture_log_density,
    mixture_proposal,
    terminal_index_distribution,
    update_index_posterior,
)
from .models import (
    DiscreteToySSM,
    LinearGaussianSSM,
    ParametricModel,
    ThetaVector,
    Trajectory,
    load_observations,
    log_gamma,
    simulate_lgssm,
)
from .numerics import WeightCollapseError, log_sum_exp, normalize_log_weights
from .rng import RngStream, multinomial_ancestors, sample_categorical
from .samplers import (
    ChainRecord,
    ChainState,
    RandomWalkProposal,
    barker_accept_prob,
    ideal_barker_kernel,
    ideal_mh_kernel,
    init_ideal_state,
    init_pmmh_state,
    init_trajectory_state,
    make_lg_log_posterior,
    mh_accept_prob,
    mpgibbs_kernel,
    pgibbs_kernel,
    pgibbs_theta_step,
    pmmh_kernel,
    run_chain,
)

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
