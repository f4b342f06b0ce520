import math

import numpy as np
import pytest

from helpers import (
    discrete_joint_target,
    enumerate_outcomes,
    make_toy_model,
    stationary_flow,
    tv_distance,
)
from pmcmc.csmc import CsmcConfig, ModelTarget
from pmcmc.kalman import kalman_loglik
from pmcmc.marginal import (
    DiscreteGridPair,
    GaussianRandomWalkPair,
    MarginalTarget,
    PRIOR_MIXTURE,
    index_prior,
)
from pmcmc.models import LinearGaussianSSM, ThetaVector, log_gamma, simulate_lgssm
from pmcmc.rng import RngStream
from pmcmc.samplers import (
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
    theta_components,
)


def lg_setup(t_count=10, seed=100):
    rng = RngStream(seed)
    theta = ThetaVector(0.8, 0.6, 0.5)
    _, y = simulate_lgssm(theta, t_count, rng.child(0))
    return LinearGaussianSSM(y), theta


# ---------------------------------------------------------------------------
# acceptance-probability algebra
# ---------------------------------------------------------------------------


def test_barker_never_exceeds_metropolis():
    for delta in np.concatenate([np.linspace(-20, 20, 401), [-np.inf]]):
        b, m = barker_accept_prob(delta), mh_accept_prob(delta)
        assert b <= m + 1e-15
        assert 0.0 <= b <= 1.0 and 0.0 <= m <= 1.0


def test_barker_equal_densities_is_half():
    assert barker_accept_prob(0.0) == 0.5


def test_mh_always_accepts_uphill():
    assert mh_accept_prob(0.0) == 1.0
    assert mh_accept_prob(3.2) == 1.0


# ---------------------------------------------------------------------------
# PMMH
# ---------------------------------------------------------------------------


def test_pmmh_with_exact_likelihood_reproduces_ideal_mh():
    model, theta0 = lg_setup()
    proposal = RandomWalkProposal(0.0225)
    log_target = make_lg_log_posterior(model)
    exact = lambda theta, rng: kalman_loglik(theta, model.y)

    state_p = ChainState(theta0, None, kalman_loglik(theta0, model.y), model.log_prior(theta0))
    state_i = init_ideal_state(theta0, log_target)
    root = RngStream(55)
    accepts_p, accepts_i = [], []
    for i in range(300):
        it = root.child(i)
        state_p, acc_p = pmmh_kernel(state_p, model, proposal, 8, it, loglik_estimator=exact)
        state_i, acc_i = ideal_mh_kernel(state_i, log_target, proposal, it)
        accepts_p.append(acc_p)
        accepts_i.append(acc_i)
        assert state_p.theta == state_i.theta
    assert accepts_p == accepts_i
    assert any(accepts_p) and not all(accepts_p)


def test_pmmh_out_of_support_rejects_without_filter_run():
    model, theta0 = lg_setup()

    class FixedProposal:
        def sample(self, theta, rng, trajectory=None):
            return ThetaVector(1.5, 1.0, 1.0)

        def log_q(self, a, b, trajectory=None):
            return 0.0

    calls = []

    def estimator(theta, rng):
        calls.append(theta)
        return 0.0

    state = ChainState(theta0, None, -10.0, model.log_prior(theta0))
    new_state, accepted = pmmh_kernel(state, model, FixedProposal(), 8, RngStream(1), loglik_estimator=estimator)
    assert not accepted and new_state is state and calls == []


def test_pmmh_runs_with_bootstrap_and_moves(tmp_path):
    model, theta0 = lg_setup()
    proposal = RandomWalkProposal(0.0225)
    state = init_pmmh_state(model, theta0, 32, RngStream(9))
    records, state = run_chain(state, lambda s, r: pmmh_kernel(s, model, proposal, 32, r), 400, RngStream(10))
    assert 0.0 < np.mean([r.accepted for r in records]) < 1.0
    assert math.isfinite(records[-1].log_lik)


def test_pmmh_optionally_carries_a_sampled_trajectory():
    model, theta0 = lg_setup(t_count=6)
    proposal = RandomWalkProposal(0.09)
    state = init_pmmh_state(model, theta0, 16, RngStream(21), sample_trajectory=True)
    assert state.trajectory.shape == (6,)
    root = RngStream(22)
    saw_update = False
    for i in range(100):
        new_state, accepted = pmmh_kernel(
            state, model, proposal, 16, root.child(i), sample_trajectory=True
        )
        if accepted:
            saw_update = saw_update or not np.array_equal(new_state.trajectory, state.trajectory)
            assert new_state.trajectory.shape == (6,)
        else:
            assert new_state is state
        state = new_state
    assert saw_update


def test_init_pmmh_rejects_bad_theta():
    model, _ = lg_setup()
    with pytest.raises(ValueError):
        init_pmmh_state(model, ThetaVector(2.0, 1.0, 1.0), 8, RngStream(0))


# ---------------------------------------------------------------------------
# idealized kernels: exact detailed balance and invariance by enumeration
# ---------------------------------------------------------------------------


class GridProposal:
    """Random walk on a finite grid of parameter values (for enumeration)."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def sample(self, theta, rng, trajectory=None):
        return int(rng.categorical(self.matrix[theta]))

    def log_q(self, theta_to, theta_from, trajectory=None):
        p = self.matrix[theta_from, theta_to]
        return math.log(p) if p > 0 else -np.inf


def three_point_target():
    log_pi = np.log(np.array([0.5, 0.2, 0.3]))
    proposal = GridProposal([[0.4, 0.3, 0.3], [0.25, 0.5, 0.25], [0.2, 0.3, 0.5]])
    return log_pi, proposal


def enumerate_theta_kernel(kernel, log_pi, proposal):
    rows = {}
    for j in range(log_pi.size):
        state = ChainState(j, None, float(log_pi[j]), None)
        law = enumerate_outcomes(lambda rng: kernel(state, lambda t: float(log_pi[t]), proposal, rng)[0].theta)
        assert abs(sum(law.values()) - 1.0) < 1e-12
        rows[j] = law
    return rows


def test_ideal_mh_detailed_balance_exact():
    log_pi, proposal = three_point_target()
    rows = enumerate_theta_kernel(ideal_mh_kernel, log_pi, proposal)
    pi = np.exp(log_pi)
    pi = pi / pi.sum()
    for i in range(3):
        for j in range(3):
            flow_ij = pi[i] * rows[i].get(j, 0.0)
            flow_ji = pi[j] * rows[j].get(i, 0.0)
            assert flow_ij == pytest.approx(flow_ji, abs=1e-12)


@pytest.mark.parametrize("kernel", [ideal_mh_kernel, ideal_barker_kernel])
def test_ideal_kernels_enumerated_invariance(kernel):
    log_pi, proposal = three_point_target()
    rows = enumerate_theta_kernel(kernel, log_pi, proposal)
    pi_vec = np.exp(log_pi)
    pi_vec = pi_vec / pi_vec.sum()
    pi = {j: pi_vec[j] for j in range(3)}
    assert tv_distance(pi, stationary_flow(pi, rows)) < 1e-10


def test_ideal_mh_uphill_always_accepts():
    log_pi, _ = three_point_target()

    class ToZero:
        def sample(self, theta, rng, trajectory=None):
            return 0

        def log_q(self, a, b, trajectory=None):
            return 0.0

    state = ChainState(1, None, float(log_pi[1]), None)
    new_state, accepted = ideal_mh_kernel(state, lambda t: float(log_pi[t]), ToZero(), RngStream(0))
    assert accepted and new_state.theta == 0


def test_ideal_barker_acceptance_statistics():
    # symmetric proposal between two equal-density points accepts ~half the time
    log_pi = np.zeros(2)
    proposal = GridProposal([[0.0, 1.0], [1.0, 0.0]])
    state = ChainState(0, None, 0.0, None)
    root = RngStream(8)
    acc = [ideal_barker_kernel(state, lambda t: 0.0, proposal, root.child(i))[1] for i in range(20_000)]
    assert abs(np.mean(acc) - 0.5) < 3 * 0.5 / math.sqrt(len(acc))


# ---------------------------------------------------------------------------
# classical particle Gibbs
# ---------------------------------------------------------------------------


def test_pgibbs_theta_step_same_proposal_always_accepts():
    model, theta0 = lg_setup()

    class Identity:
        def sample(self, theta, rng, trajectory=None):
            return theta

        def log_q(self, a, b, trajectory=None):
            return 0.0

    trajectory = np.zeros(model.horizon + 1)
    state = ChainState(theta0, trajectory, log_gamma(model, trajectory, theta0), model.log_prior(theta0))
    _, accepted = pgibbs_theta_step(state, model, Identity(), RngStream(0))
    assert accepted


class FlatPotentialLG(LinearGaussianSSM):
    """Transition-only model: every potential is 1 (pure prior process)."""

    def log_potential(self, t, x_prev, x_new, theta):
        return np.zeros(np.shape(np.asarray(x_new, dtype=float)))


class RhoOnlyProposal:
    def __init__(self, step):
        self.step = step

    def sample(self, theta, rng, trajectory=None):
        return ThetaVector(theta.rho + self.step * float(rng.normal()), theta.sigma2_x, theta.sigma2_y)

    def log_q(self, a, b, trajectory=None):
        return 0.0


def test_pgibbs_theta_chain_matches_quadrature_on_rho_slice():
    # fixed trajectory, flat potentials: the theta-step targets
    # p(rho) * prod_t p(x_t | x_{t-1}, rho) on the slice; quadrature is the oracle
    gen = np.random.default_rng(3)
    y = np.zeros(8)
    model = FlatPotentialLG(y)
    s2x, s2y = 0.4, 0.7
    trajectory = gen.normal(size=8) * 0.7

    grid = np.linspace(-0.999, 0.999, 4001)
    log_dens = np.array(
        [log_gamma(model, trajectory, ThetaVector(r, s2x, s2y)) for r in grid]
    )
    dens = np.exp(log_dens - log_dens.max())
    dens /= np.trapezoid(dens, grid)
    mean_oracle = np.trapezoid(grid * dens, grid)
    var_oracle = np.trapezoid((grid - mean_oracle) ** 2 * dens, grid)

    theta = ThetaVector(0.0, s2x, s2y)
    state = ChainState(theta, trajectory, log_gamma(model, trajectory, theta), model.log_prior(theta))
    proposal = RhoOnlyProposal(0.25)
    root = RngStream(44)
    draws = np.empty(20_000)
    for i in range(draws.size):
        state, _ = pgibbs_theta_step(state, model, proposal, root.child(i))
        draws[i] = state.theta.rho
    kept = draws[2_000:]
    from pmcmc.diagnostics import iact

    tau = iact(kept)
    se_mean = math.sqrt(var_oracle * tau / kept.size)
    assert abs(kept.mean() - mean_oracle) < 4 * se_mean
    assert abs(kept.var() - var_oracle) < 0.15 * var_oracle


def test_pgibbs_kernel_runs_and_records(tmp_path):
    model, theta0 = lg_setup(t_count=6)
    state = init_trajectory_state(model, theta0, 8, RngStream(5))
    cfg = CsmcConfig(8)
    proposal = RandomWalkProposal(0.0225)
    records, state = run_chain(state, lambda s, r: pgibbs_kernel(s, model, proposal, cfg, r), 200, RngStream(6))
    assert len(records) == 200
    assert state.trajectory.shape == (6,)


# ---------------------------------------------------------------------------
# marginalized particle Gibbs
# ---------------------------------------------------------------------------


def test_mpgibbs_single_slot_reduces_to_csmc_potentials():
    # criterion: with M=1 the marginal potential equals the fixed-theta
    # potential pointwise, and the index never moves
    model, theta = lg_setup(t_count=8)
    prior = np.array([0.0])
    marginal = MarginalTarget(model, (theta,), prior, PRIOR_MIXTURE)
    plain = ModelTarget(model, theta)
    gen = np.random.default_rng(0)
    x0 = gen.normal(size=6)
    logg_m, aux = marginal.score_initial(x0)
    logg_p, _ = plain.score_initial(x0)
    np.testing.assert_allclose(logg_m, logg_p, atol=1e-12)
    x_prev, x_new = x0, gen.normal(size=6)
    for t in range(1, model.horizon + 1):
        logg_m, aux = marginal.score_step(t, x_prev, x_new, aux)
        logg_p, _ = plain.score_step(t, x_prev, x_new, None)
        np.testing.assert_allclose(logg_m, logg_p, atol=1e-12)
        x_prev, x_new = x_new, gen.normal(size=6)


def test_mpgibbs_single_slot_kernel_smoke():
    model, theta0 = lg_setup(t_count=6)
    pair = GaussianRandomWalkPair(0.0225)
    state = init_trajectory_state(model, theta0, 4, RngStream(1))
    cfg = CsmcConfig(4)
    for i in range(50):
        state, accepted = mpgibbs_kernel(state, model, pair, 1, cfg, RngStream(2).child(i))
        assert state.index == 0 and not accepted
        assert state.theta == theta0


def test_mpgibbs_moves_parameters_with_two_slots():
    model, theta0 = lg_setup(t_count=8)
    pair = GaussianRandomWalkPair(0.0225)
    state = init_trajectory_state(model, theta0, 16, RngStream(3))
    cfg = CsmcConfig(16)
    records, state = run_chain(
        state, lambda s, r: mpgibbs_kernel(s, model, pair, 2, cfg, r), 300, RngStream(4)
    )
    acc = np.mean([r.accepted for r in records])
    assert 0.0 < acc < 1.0
    thetas = {r.rho for r in records}
    assert len(thetas) > 10


def test_mpgibbs_enumerated_invariance_prior_mixture():
    # joint (trajectory, parameter) law is exactly stationary; the
    # posterior-mixture/backward-sampling combination runs in the acceptance suite
    model = make_toy_model(t_count=3, seed=7)
    pi = discrete_joint_target(model)
    pair = DiscreteGridPair(q_u=((0.7, 0.3), (0.4, 0.6)), q_theta=((0.55, 0.45), (0.25, 0.75)))
    cfg = CsmcConfig(2, backward_sampling=False)
    rows = {}
    for (path, j) in pi:
        state = ChainState(theta=j, trajectory=np.array(path, dtype=float), index=0)

        def run_once(rng):
            new_state, _ = mpgibbs_kernel(state, model, pair, 2, cfg, rng, PRIOR_MIXTURE)
            return (tuple(int(v) for v in new_state.trajectory), new_state.theta)

        law = enumerate_outcomes(run_once)
        assert abs(sum(law.values()) - 1.0) < 1e-12
        rows[(path, j)] = law
    assert tv_distance(pi, stationary_flow(pi, rows)) < 1e-10


def test_mpgibbs_validates_slot_count():
    model, theta0 = lg_setup(t_count=4)
    state = init_trajectory_state(model, theta0, 4, RngStream(0))
    with pytest.raises(ValueError):
        mpgibbs_kernel(state, model, GaussianRandomWalkPair(0.0225), 0, CsmcConfig(4), RngStream(1))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def test_run_chain_records_are_per_iteration():
    model, theta0 = lg_setup(t_count=4)
    log_target = make_lg_log_posterior(model)
    state = init_ideal_state(theta0, log_target)
    proposal = RandomWalkProposal(0.0225)
    records, _ = run_chain(state, lambda s, r: ideal_mh_kernel(s, log_target, proposal, r), 50, RngStream(2))
    assert [r.iteration for r in records] == list(range(50))
    assert all(isinstance(r.accepted, bool) for r in records)


def test_theta_components_for_plain_values():
    assert theta_components(ThetaVector(0.1, 0.2, 0.3)) == (0.1, 0.2, 0.3)
    rho, s2x, s2y = theta_components(4)
    assert rho == 4.0 and math.isnan(s2x) and math.isnan(s2y)
