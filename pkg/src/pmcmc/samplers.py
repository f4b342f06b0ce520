"""MCMC kernels over parameters and trajectories.

Five kernels share the ChainState container:

* pmmh_kernel        pseudo-marginal MH with the bootstrap filter's Z estimate
* pgibbs_kernel      CSMC trajectory refresh + Hastings step on the parameter
* mpgibbs_kernel     marginalized particle Gibbs: CSMC on the index-mixture
                     target, then a draw from the terminal index posterior
* ideal_mh_kernel    exact MH on the parameter posterior (oracle likelihood)
* ideal_barker_kernel same, accepting with r / (1 + r)

Kernels take the iteration's RngStream and split it by purpose (proposal,
acceptance, filter/sweep, index selection), so swapping the likelihood
estimator or adding a consumer never perturbs the other draws. Every kernel
returns (new_state, accepted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import bootstrap_filter
from .csmc import CsmcConfig, ModelTarget, csmc_kernel
from .kalman import kalman_loglik
from .marginal import (
    POSTERIOR_MIXTURE,
    MarginalTarget,
    ProposalPair,
    index_prior,
)
from .models import ThetaVector, log_gamma
from .numerics import WeightCollapseError
from .rng import RngStream


@dataclass
class ChainState:
    """Current chain point with caches that always match ``theta``.

    log_lik holds the cached log Z-hat (PMMH), the cached exact log target
    (idealized chains), or the path log-density (particle Gibbs); ``index``
    is the parameter-slot flag of the marginalized sampler.
    """

    theta: object
    trajectory: np.ndarray | None = None
    log_lik: float | None = None
    log_prior: float | None = None
    index: int = 0


@dataclass(frozen=True)
class ChainRecord:
    iteration: int
    rho: float
    sigma2_x: float
    sigma2_y: float
    accepted: bool
    index: int
    log_lik: float


class RandomWalkProposal:
    """Gaussian random walk N(theta' | theta, tau * diag(scale)) on the parameter vector."""

    def __init__(self, tau: float, scale=(1.0, 1.0, 1.0)):
        self.tau = float(tau)
        self.scale = np.asarray(scale, dtype=float)

    def sample(self, theta: ThetaVector, rng: RngStream, trajectory=None) -> ThetaVector:
        draw = theta.as_array() + np.sqrt(self.tau * self.scale) * rng.normal(3)
        return ThetaVector.from_array(draw)

    def log_q(self, theta_to: ThetaVector, theta_from: ThetaVector, trajectory=None) -> float:
        var = self.tau * self.scale
        d = theta_to.as_array() - theta_from.as_array()
        return float(np.sum(-0.5 * (math.log(2.0 * math.pi) + np.log(var) + d * d / var)))


def mh_accept_prob(delta: float) -> float:
    """min(1, exp(delta)) for a log acceptance ratio delta."""
    if delta >= 0.0:
        return 1.0
    if delta == -np.inf:
        return 0.0
    return math.exp(delta)


def barker_accept_prob(delta: float) -> float:
    """r / (1 + r) with r = exp(delta); never exceeds the MH probability."""
    if delta == -np.inf:
        return 0.0
    if delta >= 0.0:
        return 1.0 / (1.0 + math.exp(-delta))
    r = math.exp(delta)
    return r / (1.0 + r)


# ---------------------------------------------------------------------------
# PMMH and the idealized chains
# ---------------------------------------------------------------------------


def pmmh_kernel(
    state: ChainState,
    model,
    proposal,
    n_particles: int,
    rng: RngStream,
    loglik_estimator=None,
    sample_trajectory: bool = False,
) -> tuple[ChainState, bool]:
    """Pseudo-marginal MH step; out-of-support proposals reject without a filter run.

    ``loglik_estimator(theta, rng)`` overrides the bootstrap filter (tests
    inject the exact Kalman likelihood, which reduces the kernel to ideal MH
    decision-for-decision under a shared stream).
    """
    rng_prop, rng_accept, rng_filter = rng.child(0), rng.child(1), rng.child(2)
    theta_new = proposal.sample(state.theta, rng_prop)
    log_prior_new = model.log_prior(theta_new)
    if log_prior_new == -np.inf:
        return state, False
    out = None
    if loglik_estimator is None:
        out = bootstrap_filter(model, theta_new, n_particles, rng_filter, keep_history=sample_trajectory)
        loglik_new = out.log_z_estimate
    else:
        loglik_new = loglik_estimator(theta_new, rng_filter)
    delta = ((loglik_new + log_prior_new) + proposal.log_q(state.theta, theta_new)) - (
        (state.log_lik + state.log_prior) + proposal.log_q(theta_new, state.theta)
    )
    if rng_accept.bernoulli(mh_accept_prob(delta)):
        trajectory = out.sample_trajectory(rng_filter) if (sample_trajectory and out is not None) else state.trajectory
        return ChainState(theta_new, trajectory, loglik_new, log_prior_new, state.index), True
    return state, False


def init_pmmh_state(model, theta0, n_particles: int, rng: RngStream, sample_trajectory: bool = False) -> ChainState:
    lp = model.log_prior(theta0)
    if lp == -np.inf:
        raise ValueError("initial parameter outside prior support")
    out = bootstrap_filter(model, theta0, n_particles, rng.child(2), keep_history=sample_trajectory)
    trajectory = out.sample_trajectory(rng.child(2)) if sample_trajectory else None
    return ChainState(theta0, trajectory, out.log_z_estimate, lp)


def ideal_mh_kernel(state: ChainState, log_target, proposal, rng: RngStream) -> tuple[ChainState, bool]:
    """Exact MH on the parameter target; state.log_lik caches log_target(theta)."""
    rng_prop, rng_accept = rng.child(0), rng.child(1)
    theta_new = proposal.sample(state.theta, rng_prop)
    target_new = log_target(theta_new)
    if target_new == -np.inf:
        return state, False
    delta = (target_new + proposal.log_q(state.theta, theta_new)) - (
        state.log_lik + proposal.log_q(theta_new, state.theta)
    )
    if rng_accept.bernoulli(mh_accept_prob(delta)):
        return ChainState(theta_new, None, target_new, None, state.index), True
    return state, False


def ideal_barker_kernel(state: ChainState, log_target, proposal, rng: RngStream) -> tuple[ChainState, bool]:
    """Exact Barker step: accept with probability r / (1 + r)."""
    rng_prop, rng_accept = rng.child(0), rng.child(1)
    theta_new = proposal.sample(state.theta, rng_prop)
    target_new = log_target(theta_new)
    if target_new == -np.inf:
        return state, False
    delta = (target_new + proposal.log_q(state.theta, theta_new)) - (
        state.log_lik + proposal.log_q(theta_new, state.theta)
    )
    if rng_accept.bernoulli(barker_accept_prob(delta)):
        return ChainState(theta_new, None, target_new, None, state.index), True
    return state, False


def init_ideal_state(theta0, log_target) -> ChainState:
    value = log_target(theta0)
    if value == -np.inf:
        raise ValueError("initial parameter outside the target's support")
    return ChainState(theta0, None, value, None)


def make_lg_log_posterior(model) -> callable:
    """log p(theta | y) up to a constant, via the exact Kalman marginal likelihood."""

    def log_target(theta: ThetaVector) -> float:
        lp = model.log_prior(theta)
        if lp == -np.inf:
            return -np.inf
        return kalman_loglik(theta, model.y, model.init) + lp

    return log_target


# ---------------------------------------------------------------------------
# Particle Gibbs (classical)
# ---------------------------------------------------------------------------


def pgibbs_theta_step(state: ChainState, model, proposal, rng: RngStream) -> tuple[ChainState, bool]:
    """Hastings move on theta given the trajectory, using the exact path density."""
    rng_prop, rng_accept = rng.child(0), rng.child(1)
    theta_new = proposal.sample(state.theta, rng_prop, trajectory=state.trajectory)
    log_prior_new = model.log_prior(theta_new)
    if log_prior_new == -np.inf:
        return state, False
    log_gamma_new = log_gamma(model, state.trajectory, theta_new)
    delta = (
        log_gamma_new
        + log_prior_new
        + proposal.log_q(state.theta, theta_new, trajectory=state.trajectory)
        - state.log_lik
        - state.log_prior
        - proposal.log_q(theta_new, state.theta, trajectory=state.trajectory)
    )
    if rng_accept.bernoulli(mh_accept_prob(delta)):
        return ChainState(theta_new, state.trajectory, log_gamma_new, log_prior_new, state.index), True
    return state, False


def pgibbs_kernel(state: ChainState, model, proposal, cfg: CsmcConfig, rng: RngStream) -> tuple[ChainState, bool]:
    """CSMC refresh of the trajectory, then a Hastings step on theta."""
    rng_csmc, rng_theta = rng.child(0), rng.child(1)
    target = ModelTarget(model, state.theta)
    result = csmc_kernel(target, state.trajectory, cfg, rng_csmc)
    refreshed = ChainState(
        state.theta,
        result.trajectory,
        log_gamma(model, result.trajectory, state.theta),
        model.log_prior(state.theta),
        state.index,
    )
    return pgibbs_theta_step(refreshed, model, proposal, rng_theta)


# ---------------------------------------------------------------------------
# Marginalized particle Gibbs
# ---------------------------------------------------------------------------


def mpgibbs_kernel(
    state: ChainState,
    model,
    pair: ProposalPair,
    n_slots: int,
    cfg: CsmcConfig,
    rng: RngStream,
    variant: str = POSTERIOR_MIXTURE,
) -> tuple[ChainState, bool]:
    """One sweep of the marginalized sampler.

    Draw u around the current parameter, fill the other slots from q(. | u),
    run CSMC on the index-marginalized target, then draw the new flag index
    from the terminal index posterior. ``accepted`` reports whether the
    parameter actually moved (the new index differs from the old one). A
    total index collapse retains the current state with accepted False.
    """
    if n_slots < 1:
        raise ValueError("need at least one parameter slot")
    rng_u, rng_thetas, rng_csmc, rng_index = rng.child(0), rng.child(1), rng.child(2), rng.child(3)
    slot = state.index
    u = pair.sample_u(state.theta, rng_u)
    thetas = [state.theta if j == slot else pair.sample_theta(u, rng_thetas) for j in range(n_slots)]
    try:
        prior = index_prior(u, thetas, pair, model.log_prior)
    except WeightCollapseError:
        return state, False
    target = MarginalTarget(model, thetas, prior.log_weights, variant, pair=pair, u=u)
    result = csmc_kernel(target, state.trajectory, cfg, rng_csmc)
    try:
        terminal_post = target.index_posterior_for(result.trajectory)
    except WeightCollapseError:
        return state, False
    new_slot = rng_index.categorical(terminal_post.probabilities)
    new_state = ChainState(thetas[new_slot], result.trajectory, None, None, new_slot)
    return new_state, new_slot != slot


def init_trajectory_state(model, theta0, n_particles: int, rng: RngStream) -> ChainState:
    """Starting state for the trajectory-carrying samplers: one filter draw."""
    lp = model.log_prior(theta0)
    if lp == -np.inf:
        raise ValueError("initial parameter outside prior support")
    out = bootstrap_filter(model, theta0, n_particles, rng, keep_history=True)
    trajectory = out.sample_trajectory(rng)
    return ChainState(theta0, trajectory, log_gamma(model, trajectory, theta0), lp)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------


def theta_components(theta) -> tuple[float, float, float]:
    if isinstance(theta, ThetaVector):
        return theta.rho, theta.sigma2_x, theta.sigma2_y
    return float(theta), float("nan"), float("nan")


def run_chain(state: ChainState, kernel, iterations: int, rng: RngStream) -> tuple[list[ChainRecord], ChainState]:
    """Drive ``kernel(state, iteration_rng) -> (state, accepted)`` and record each step."""
    records = []
    for i in range(iterations):
        state, accepted = kernel(state, rng.child(i))
        rho, s2x, s2y = theta_components(state.theta)
        log_lik = float("nan") if state.log_lik is None else float(state.log_lik)
        records.append(ChainRecord(i, rho, s2x, s2y, accepted, state.index, log_lik))
    return records, state
