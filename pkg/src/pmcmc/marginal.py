"""Machinery for running CSMC with the parameter index marginalized out.

Given parameter points theta^{1:M} tied together by an auxiliary variable u
(one point is the current chain state, the rest are proposals drawn around
u), the trajectory target becomes a mixture over which index is "the"
parameter. The index never has to be instantiated during the sweep: a
categorical prior over indices is updated step by step into a running
posterior, transitions are proposed from a mixture, and the potential is the
mixture density ratio. Because the running posterior is a finite vector, the
formally path-dependent model stays computationally Markovian: the sweep and
the backward pass both cost O(N M) per step via cached per-particle,
per-parameter prefix log-densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .csmc import CsmcTarget, ParticleSystem
from .models import ThetaVector
from .numerics import (
    WeightCollapseError,
    log_normal_pdf,
    log_sum_exp,
    log_sum_exp_over_axis,
)
from .rng import RngStream

PRIOR_MIXTURE = "prior_mixture"
POSTERIOR_MIXTURE = "posterior_mixture"
CLOSED_FORM_PRIOR_MIXTURE = "closed_form_prior_mixture"
MIXTURE_VARIANTS = (PRIOR_MIXTURE, POSTERIOR_MIXTURE, CLOSED_FORM_PRIOR_MIXTURE)


class ConfigurationError(ValueError):
    """Raised when a proposal variant is requested that the model cannot support."""


class ProposalPair:
    """Two-half parameter proposal through an auxiliary variable u.

    q_u(u | theta) spreads the current parameter into u; q_theta(theta' | u)
    generates fresh parameter points around u. Marginally this composes into
    a single proposal q(theta' | theta).
    """

    def sample_u(self, theta, rng: RngStream):
        raise NotImplementedError

    def log_q_u(self, u, theta) -> float:
        raise NotImplementedError

    def sample_theta(self, u, rng: RngStream):
        raise NotImplementedError

    def log_q_theta(self, theta, u) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianRandomWalkPair(ProposalPair):
    """Gaussian halves N(u | theta, (step/2) Sigma), N(theta' | u, (step/2) Sigma).

    ``step`` is the full random-walk step size, so the composition recovers a
    N(theta' | theta, step * Sigma) random walk marginally. ``u_step``
    overrides the u-half to build deliberately asymmetric pairs in tests.
    """

    step: float
    scale: tuple = (1.0, 1.0, 1.0)
    u_step: float | None = None

    @property
    def _scale_arr(self) -> np.ndarray:
        return np.asarray(self.scale, dtype=float)

    def _half_var(self, step: float) -> np.ndarray:
        return 0.5 * step * self._scale_arr

    def sample_u(self, theta: ThetaVector, rng: RngStream) -> np.ndarray:
        var = self._half_var(self.u_step if self.u_step is not None else self.step)
        return theta.as_array() + np.sqrt(var) * rng.normal(3)

    def log_q_u(self, u, theta: ThetaVector) -> float:
        var = self._half_var(self.u_step if self.u_step is not None else self.step)
        return float(np.sum(log_normal_pdf(np.asarray(u, dtype=float), theta.as_array(), var)))

    def sample_theta(self, u, rng: RngStream) -> ThetaVector:
        draw = np.asarray(u, dtype=float) + np.sqrt(self._half_var(self.step)) * rng.normal(3)
        return ThetaVector.from_array(draw)

    def log_q_theta(self, theta: ThetaVector, u) -> float:
        return float(np.sum(log_normal_pdf(theta.as_array(), np.asarray(u, dtype=float), self._half_var(self.step))))

    @property
    def is_symmetric(self) -> bool:
        return self.u_step is None or self.u_step == self.step


@dataclass(frozen=True)
class DiscreteGridPair(ProposalPair):
    """Proposal pair on finite grids: theta and u are integer indices.

    Rows of ``q_u`` (theta -> u) and ``q_theta`` (u -> theta) are probability
    vectors. Used by the enumeration tests, where every random choice must be
    a categorical draw.
    """

    q_u: tuple
    q_theta: tuple

    def _qu(self) -> np.ndarray:
        return np.asarray(self.q_u, dtype=float)

    def _qt(self) -> np.ndarray:
        return np.asarray(self.q_theta, dtype=float)

    def sample_u(self, theta: int, rng: RngStream) -> int:
        return rng.categorical(self._qu()[theta])

    def log_q_u(self, u: int, theta: int) -> float:
        p = self._qu()[theta, u]
        return math.log(p) if p > 0 else -np.inf

    def sample_theta(self, u: int, rng: RngStream) -> int:
        return rng.categorical(self._qt()[u])

    def log_q_theta(self, theta: int, u: int) -> float:
        p = self._qt()[u, theta]
        return math.log(p) if p > 0 else -np.inf


@dataclass(frozen=True)
class IndexPosterior:
    """Normalized log-weights over the parameter indices l in [M]."""

    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        total = log_sum_exp(lw)
        if total == -np.inf:
            raise WeightCollapseError("index posterior has no support")
        object.__setattr__(self, "log_weights", lw - total)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w / w.sum()

    def __len__(self) -> int:
        return self.log_weights.size


@dataclass(frozen=True)
class AugmentedState:
    """One point of the index-augmented chain: trajectory, parameter slots, u, flag index."""

    trajectory: np.ndarray
    thetas: tuple
    u: object
    index: int

    def __post_init__(self):
        if not 0 <= self.index < len(self.thetas):
            raise ValueError("flag index outside [M]")


def index_prior(u, thetas, pair: ProposalPair, log_prior_fn) -> IndexPosterior:
    """Categorical prior over which slot carries the stationary parameter.

    log-weight of l is log p(theta^l) + log q(u | theta^l)
    + sum_{j != l} log q(theta^j | u). Slots whose parameter leaves the prior
    support get weight -inf rather than aborting, which makes out-of-support
    proposals behave as automatic rejections.
    """
    m = len(thetas)
    log_p = np.array([log_prior_fn(th) for th in thetas])
    log_qt = np.array([pair.log_q_theta(th, u) for th in thetas])
    logw = np.full(m, -np.inf)
    for l in range(m):
        if log_p[l] == -np.inf:
            continue
        others = 0.0
        dead = False
        for j in range(m):
            if j == l:
                continue
            if log_qt[j] == -np.inf:
                dead = True
                break
            others += log_qt[j]
        if dead:
            continue
        lq_u = pair.log_q_u(u, thetas[l])
        logw[l] = log_p[l] + lq_u + others
    return IndexPosterior(logw)  # raises WeightCollapseError when no slot has support


def _density_matrices(model, t, x_prev, x_new, thetas, valid, stack=None):
    """Per-theta transition and potential log-densities, shape (n, M) each."""
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float))
    if hasattr(model, "density_matrices"):
        return model.density_matrices(t, x_prev, x_new, thetas, valid, stack)
    n, m = x_new.size, len(thetas)
    trans = np.empty((n, m))
    pot = np.empty((n, m))
    for j, th in enumerate(thetas):
        if not valid[j]:
            trans[:, j] = -np.inf
            pot[:, j] = -np.inf
        elif t == 0:
            trans[:, j] = model.log_p0(x_new, th)
            pot[:, j] = model.log_potential(0, None, x_new, th)
        else:
            trans[:, j] = model.log_transition(t, x_prev, x_new, th)
            pot[:, j] = model.log_potential(t, x_prev, x_new, th)
    return trans, pot


def _support_mask(model, thetas) -> np.ndarray:
    return np.array([np.isfinite(model.log_prior(th)) for th in thetas])


def _normalize_rows_keep_dead(logw: np.ndarray) -> np.ndarray:
    totals = log_sum_exp_over_axis(logw, axis=1)
    finite = np.isfinite(totals)
    out = logw - np.where(finite, totals, 0.0)[:, None]
    out[~finite] = -np.inf
    return out


def update_index_posterior(post: IndexPosterior, t, x_prev, x_new, thetas, model) -> IndexPosterior:
    """One Bayes step: reweight by the step's transition and potential density.

    ``x_prev`` is None at t = 0, where the initial density plays the
    transition's role. Raises WeightCollapseError on total collapse.
    """
    valid = _support_mask(model, thetas)
    xp = None if x_prev is None else np.atleast_1d(np.asarray(x_prev, dtype=float))
    trans, pot = _density_matrices(model, t, xp, x_new, thetas, valid)
    return IndexPosterior(post.log_weights + trans[0] + pot[0])


def marginal_eta(t, x_prev, x_new, thetas, post: IndexPosterior, model) -> float:
    """Marginalized step density: log sum_l p_t(theta^l) g_t(theta^l) post_l."""
    valid = _support_mask(model, thetas)
    trans, pot = _density_matrices(model, t, x_prev, x_new, thetas, valid)
    return float(log_sum_exp(post.log_weights + trans[0] + pot[0]))


def mixture_log_density(variant, t, x_prev, x_new, thetas, log_mix_weights, model, valid=None, pair=None, u=None):
    """Log-density of the mixture transition proposal at x_new, batch over particles."""
    if valid is None:
        valid = _support_mask(model, thetas)
    if variant == CLOSED_FORM_PRIOR_MIXTURE and t > 0:
        mean, var = model.closed_form_transition_mixture(t, x_prev, u, pair.step, pair._scale_arr)
        return log_normal_pdf(np.asarray(x_new, dtype=float), mean, var)
    trans, _ = _density_matrices(model, t, x_prev, x_new, thetas, valid)
    return log_sum_exp_over_axis(log_mix_weights + trans, axis=1)


def mixture_proposal(variant, t, x_prev, thetas, post: IndexPosterior, model, rng: RngStream, pair=None, u=None):
    """Sample one transition from the requested mixture; returns (x, log-density fn).

    The returned evaluator computes the exact log-density of the proposal at
    any point, which is what the potential divides by.
    """
    if variant not in MIXTURE_VARIANTS:
        raise ConfigurationError(f"unknown mixture variant {variant!r}")
    if variant == CLOSED_FORM_PRIOR_MIXTURE and not hasattr(model, "closed_form_transition_mixture"):
        raise ConfigurationError("model has no closed-form transition mixture")
    valid = _support_mask(model, thetas)
    weights = post.probabilities
    xp = None if x_prev is None else np.atleast_1d(np.asarray(x_prev, dtype=float))
    if variant == CLOSED_FORM_PRIOR_MIXTURE and t > 0:
        mean, var = model.closed_form_transition_mixture(t, xp, u, pair.step, pair._scale_arr)
        x = mean + np.sqrt(var) * rng.normal(xp.shape)
        x = float(x[0])
    else:
        comp = rng.categorical(weights)
        if t == 0:
            x = float(model.sample_x0(thetas[comp], 1, rng)[0])
        else:
            x = float(model.sample_transition(t, xp, thetas[comp], rng)[0])

    log_mix = post.log_weights[None, :]

    def log_density(point) -> float:
        out = mixture_log_density(variant, t, xp, np.atleast_1d(point), thetas, log_mix, model, valid, pair, u)
        return float(out[0])

    return x, log_density


def marginal_potential(t, x_prev, x_new, thetas, post: IndexPosterior, model, log_proposal_density) -> float:
    """log g_t for the marginalized model: log eta_t minus the proposal's log-density."""
    eta = marginal_eta(t, x_prev, x_new, thetas, post, model)
    log_q = log_proposal_density(x_new) if callable(log_proposal_density) else float(log_proposal_density)
    if eta == -np.inf:
        return -np.inf
    return eta - log_q


def terminal_index_distribution(trajectory, thetas, u, pair: ProposalPair, model, log_prior_fn=None) -> IndexPosterior:
    """Index posterior at the horizon: the prior updated along the whole path."""
    states = np.asarray(getattr(trajectory, "states", trajectory), dtype=float)
    post = index_prior(u, thetas, pair, log_prior_fn or model.log_prior)
    post = update_index_posterior(post, 0, None, states[0:1], thetas, model)
    for t in range(1, states.size):
        post = update_index_posterior(post, t, states[t - 1 : t], states[t : t + 1], thetas, model)
    return post


@dataclass(frozen=True)
class PathDensityCache:
    """Per-particle running state of the marginalized sweep.

    ``log_a[n, l]`` is the cumulative log prod_{s<=t} p_s g_s under theta^l
    along particle n's lineage (prior excluded); ``log_post`` is the running
    normalized index posterior. Rows are gathered exactly as ancestors are
    when resampling.
    """

    log_post: np.ndarray
    log_a: np.ndarray

    def take(self, idx) -> "PathDensityCache":
        return PathDensityCache(self.log_post[idx], self.log_a[idx])


class MarginalTarget(CsmcTarget):
    """The parameter-marginalized model as a CSMC target."""

    def __init__(self, model, thetas, log_index_prior, variant: str = POSTERIOR_MIXTURE, pair=None, u=None):
        if variant not in MIXTURE_VARIANTS:
            raise ConfigurationError(f"unknown mixture variant {variant!r}")
        if variant == CLOSED_FORM_PRIOR_MIXTURE:
            if not hasattr(model, "closed_form_transition_mixture"):
                raise ConfigurationError("model has no closed-form transition mixture")
            if pair is None or u is None or not hasattr(pair, "step"):
                raise ConfigurationError("closed-form mixture needs the Gaussian pair and u")
        self.model = model
        self.thetas = tuple(thetas)
        self.horizon = model.horizon
        lw = np.asarray(log_index_prior, dtype=float)
        total = log_sum_exp(lw)
        if total == -np.inf:
            raise WeightCollapseError("index prior has no support")
        self.log_prior_idx = lw - total
        self.prior_probs = np.exp(self.log_prior_idx)
        self.prior_probs /= self.prior_probs.sum()
        self.valid = _support_mask(model, self.thetas)
        self.variant = variant
        self.pair = pair
        self.u = u
        self.stack = model.make_theta_stack(self.thetas, self.valid) if hasattr(model, "make_theta_stack") else None

    # -- sampling ----------------------------------------------------------
    def _sample_components_grouped(self, t, x_prev, comp, rng):
        """Draw transitions with a per-particle component assignment."""
        n = comp.size
        out = np.empty(n)
        for j in range(len(self.thetas)):
            mask = comp == j
            if not np.any(mask):
                continue
            if t == 0:
                out[mask] = self.model.sample_x0(self.thetas[j], int(mask.sum()), rng)
            else:
                out[mask] = self.model.sample_transition(t, x_prev[mask], self.thetas[j], rng)
        return out

    def sample_initial(self, n, rng):
        if hasattr(self.model, "sample_x0_mixture"):
            return self.model.sample_x0_mixture(self.thetas, self.prior_probs, n, rng)
        comp = rng.categorical_vector(self.prior_probs, n)
        return self._sample_components_grouped(0, None, comp, rng)

    def sample_step(self, t, x_prev, aux: PathDensityCache, rng):
        if self.variant == CLOSED_FORM_PRIOR_MIXTURE:
            mean, var = self.model.closed_form_transition_mixture(t, x_prev, self.u, self.pair.step, self.pair._scale_arr)
            return mean + np.sqrt(var) * rng.normal(x_prev.shape)
        if self.variant == PRIOR_MIXTURE:
            weight_rows = np.broadcast_to(self.prior_probs, (x_prev.size, self.prior_probs.size))
        else:
            weight_rows = np.exp(aux.log_post)
        if hasattr(self.model, "sample_transition_mixture"):
            return self.model.sample_transition_mixture(t, x_prev, self.thetas, weight_rows, rng)
        comp = rng.categorical_rows(weight_rows)
        return self._sample_components_grouped(t, x_prev, comp, rng)

    # -- scoring -----------------------------------------------------------
    def _proposal_log_density(self, t, x_prev, x_new, trans, log_post_prev):
        if self.variant == CLOSED_FORM_PRIOR_MIXTURE and t > 0:
            mean, var = self.model.closed_form_transition_mixture(t, x_prev, self.u, self.pair.step, self.pair._scale_arr)
            return log_normal_pdf(x_new, mean, var)
        if self.variant == PRIOR_MIXTURE or t == 0:
            mix = self.log_prior_idx[None, :]
        else:
            mix = log_post_prev
        return log_sum_exp_over_axis(mix + trans, axis=1)

    def score_initial(self, x0):
        trans, pot = _density_matrices(self.model, 0, None, x0, self.thetas, self.valid, self.stack)
        inc = trans + pot
        weighted = self.log_prior_idx[None, :] + inc
        log_eta = log_sum_exp_over_axis(weighted, axis=1)
        log_q = self._proposal_log_density(0, None, x0, trans, None)
        logg = np.where(np.isfinite(log_eta), log_eta - log_q, -np.inf)
        log_post = self._renormalize(weighted, log_eta)
        return logg, PathDensityCache(log_post, inc)

    def score_step(self, t, x_prev, x_new, aux: PathDensityCache):
        trans, pot = _density_matrices(self.model, t, x_prev, x_new, self.thetas, self.valid, self.stack)
        inc = trans + pot
        weighted = aux.log_post + inc
        log_eta = log_sum_exp_over_axis(weighted, axis=1)
        log_q = self._proposal_log_density(t, x_prev, x_new, trans, aux.log_post)
        logg = np.where(np.isfinite(log_eta), log_eta - log_q, -np.inf)
        log_post = self._renormalize(weighted, log_eta)
        return logg, PathDensityCache(log_post, aux.log_a + inc)

    @staticmethod
    def _renormalize(weighted, totals):
        # normalize(log_post + inc): the total is the already-computed eta
        finite = np.isfinite(totals)
        if finite.all():
            return weighted - totals[:, None]
        out = weighted - np.where(finite, totals, 0.0)[:, None]
        out[~finite] = -np.inf
        return out

    def take_aux(self, aux, idx):
        return None if aux is None else aux.take(idx)

    def backward_evaluator(self, system: ParticleSystem, aux_history):
        return CachedTailEvaluator(
            self.model,
            self.thetas,
            self.valid,
            self.log_prior_idx,
            system.states,
            [a.log_a for a in aux_history],
            stack=self.stack,
            log_post_history=[a.log_post for a in aux_history],
        )

    # -- terminal index ----------------------------------------------------
    def index_posterior_for(self, trajectory) -> IndexPosterior:
        states = np.asarray(getattr(trajectory, "states", trajectory), dtype=float)
        if hasattr(self.model, "path_density_matrix"):
            path_terms = self.model.path_density_matrix(states, self.thetas, self.valid, self.stack)
            return IndexPosterior(self.log_prior_idx + path_terms)
        logw = self.log_prior_idx.copy()
        trans, pot = _density_matrices(self.model, 0, None, states[0:1], self.thetas, self.valid)
        logw = logw + trans[0] + pot[0]
        for t in range(1, states.size):
            trans, pot = _density_matrices(self.model, t, states[t - 1 : t], states[t : t + 1], self.thetas, self.valid)
            logw = logw + trans[0] + pot[0]
        return IndexPosterior(logw)


class CachedTailEvaluator:
    """Backward log-ratios for the marginalized target in O(N M) per step.

    At backward step t the ratio for particle n is

        log sum_l pi(l) A[n,l] link[n,l] B[l]  -  log sum_l pi(l) A[n,l]

    where A is the cached prefix density, link the junction term
    p_{t+1}(x'_{t+1} | x^n_t, theta^l) g_{t+1}, and B the tail density strictly
    beyond the junction, folded in incrementally as states are selected. The
    per-row normalizer cancels against the stored running posterior, so each
    step is one weighted reduction over the parameter axis.
    """

    def __init__(self, model, thetas, valid, log_prior_idx, states, log_a_history, stack=None, log_post_history=None):
        self.model = model
        self.thetas = thetas
        self.valid = valid
        self.log_prior_idx = log_prior_idx
        self.states = states
        self.log_a_history = log_a_history
        self.stack = stack
        if log_post_history is None:
            log_post_history = [
                _normalize_rows_keep_dead(log_prior_idx[None, :] + log_a) for log_a in log_a_history
            ]
        self.log_post_history = log_post_history
        self.log_b = np.zeros(len(thetas))
        self._links = None

    def log_ratios(self, t: int, tail: np.ndarray) -> np.ndarray:
        x_next = float(tail[0])
        xp = self.states[t]
        if hasattr(self.model, "backward_link_matrix"):
            links = self.model.backward_link_matrix(t + 1, xp, x_next, self.thetas, self.valid, self.stack)
        else:
            trans, pot = _density_matrices(
                self.model, t + 1, xp, np.full(xp.size, x_next), self.thetas, self.valid, self.stack
            )
            links = trans + pot
            if not self.valid.all():
                links[:, ~self.valid] = 0.0  # dead columns carry -inf in the posterior already
        self._links = links
        return log_sum_exp_over_axis(self.log_post_history[t] + links + self.log_b[None, :], axis=1)

    def select(self, t: int, k: int) -> None:
        self.log_b = self.log_b + self._links[k]
