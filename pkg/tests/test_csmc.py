import numpy as np
import pytest

from helpers import (
    discrete_trajectory_target,
    enumerate_outcomes,
    make_toy_model,
    stationary_flow,
    tv_distance,
)
from pmcmc.csmc import (
    CsmcConfig,
    CsmcTarget,
    FullPathTailEvaluator,
    MarkovTailEvaluator,
    ModelTarget,
    TERMINAL_FORCED,
    TERMINAL_STANDARD,
    backward_sampling_pass,
    csmc_kernel,
)
from pmcmc.models import LinearGaussianSSM, ThetaVector, simulate_lgssm
from pmcmc.numerics import WeightCollapseError, normalize_log_weights
from pmcmc.rng import RngStream


def lg_setup(t_count=6, seed=31):
    rng = RngStream(seed)
    theta = ThetaVector(0.7, 0.6, 0.5)
    x, y = simulate_lgssm(theta, t_count, rng.child(0))
    return LinearGaussianSSM(y), theta, x


def enumerate_csmc_row(target, ref, cfg):
    return enumerate_outcomes(
        lambda rng: tuple(int(v) for v in csmc_kernel(target, np.array(ref, dtype=float), cfg, rng).trajectory)
    )


# ---------------------------------------------------------------------------
# exact invariance on the discrete instance
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("backward", [False, True])
def test_enumerated_invariance_standard_selection(backward):
    model = make_toy_model(t_count=3, seed=7)
    pi = discrete_trajectory_target(model, 0)
    target = ModelTarget(model, 0)
    cfg = CsmcConfig(2, backward_sampling=backward, terminal_selection=TERMINAL_STANDARD)
    rows = {ref: enumerate_csmc_row(target, ref, cfg) for ref in pi}
    for law in rows.values():
        assert abs(sum(law.values()) - 1.0) < 1e-12
    assert tv_distance(pi, stationary_flow(pi, rows)) < 1e-10


@pytest.mark.parametrize("backward", [False, True])
def test_forced_move_as_written_is_not_invariant(backward):
    # documents the enumeration verdict: the forced-move acceptance ratio
    # min(1, W_ref / W_proposed) biases the terminal draw
    model = make_toy_model(t_count=3, seed=7)
    pi = discrete_trajectory_target(model, 0)
    target = ModelTarget(model, 0)
    cfg = CsmcConfig(2, backward_sampling=backward, terminal_selection=TERMINAL_FORCED)
    rows = {ref: enumerate_csmc_row(target, ref, cfg) for ref in pi}
    for law in rows.values():
        assert abs(sum(law.values()) - 1.0) < 1e-12
    assert tv_distance(pi, stationary_flow(pi, rows)) > 1e-3


def test_enumerated_invariance_with_generic_backward_evaluator():
    # the O(T)-per-step full-path evaluator drives the same invariant kernel
    model = make_toy_model(t_count=3, seed=7)
    pi = discrete_trajectory_target(model, 0)
    target = ModelTarget(model, 0, generic_backward=True)
    cfg = CsmcConfig(2, backward_sampling=True)
    rows = {ref: enumerate_csmc_row(target, ref, cfg) for ref in pi}
    assert tv_distance(pi, stationary_flow(pi, rows)) < 1e-10


def test_enumerated_invariance_more_particles():
    model = make_toy_model(t_count=2, seed=19)
    pi = discrete_trajectory_target(model, 1)
    target = ModelTarget(model, 1)
    cfg = CsmcConfig(3, backward_sampling=True)
    rows = {ref: enumerate_csmc_row(target, ref, cfg) for ref in pi}
    assert tv_distance(pi, stationary_flow(pi, rows)) < 1e-10


# ---------------------------------------------------------------------------
# degenerate weights
# ---------------------------------------------------------------------------


class RefOnlyTarget(CsmcTarget):
    """Assigns -inf weight to every non-reference particle at the last step."""

    def __init__(self, base: ModelTarget, dead_step: int):
        self.base = base
        self.horizon = base.horizon
        self.dead_step = dead_step

    def sample_initial(self, n, rng):
        return self.base.sample_initial(n, rng)

    def score_initial(self, x0):
        logg, aux = self.base.score_initial(x0)
        if self.dead_step == 0:
            logg = logg.copy()
            logg[1:] = -np.inf
        return logg, aux

    def sample_step(self, t, x_prev, aux, rng):
        return self.base.sample_step(t, x_prev, aux, rng)

    def score_step(self, t, x_prev, x_new, aux):
        logg, aux = self.base.score_step(t, x_prev, x_new, aux)
        if t == self.dead_step:
            logg = logg.copy()
            logg[1:] = -np.inf
        return logg, aux

    def backward_evaluator(self, system, aux_history):
        return self.base.backward_evaluator(system, aux_history)


@pytest.mark.parametrize("dead_step", [0, 3, 5])
@pytest.mark.parametrize("backward", [False, True])
def test_non_reference_collapse_returns_reference(dead_step, backward):
    model, theta, x = lg_setup()
    target = RefOnlyTarget(ModelTarget(model, theta), dead_step)
    cfg = CsmcConfig(4, backward_sampling=backward)
    result = csmc_kernel(target, x, cfg, RngStream(5))
    assert result.degenerate
    np.testing.assert_array_equal(result.trajectory, x)


# ---------------------------------------------------------------------------
# reference pinning and lineages
# ---------------------------------------------------------------------------


def test_reference_slot_pinned_through_sweep():
    model, theta, x = lg_setup(t_count=9)
    result = csmc_kernel(ModelTarget(model, theta), x, CsmcConfig(8), RngStream(12))
    system = result.system
    system.validate()
    np.testing.assert_array_equal(system.lineage_states(0), x)
    assert np.all(system.ancestors[:, 0] == 0)
    # the returned trajectory is consistent with its selected indices
    np.testing.assert_array_equal(
        result.trajectory, system.states[np.arange(system.horizon + 1), result.indices]
    )


def test_no_backward_output_is_an_ancestral_lineage():
    model, theta, x = lg_setup(t_count=7)
    result = csmc_kernel(ModelTarget(model, theta), x, CsmcConfig(6, backward_sampling=False), RngStream(3))
    system = result.system
    k = result.indices[-1]
    np.testing.assert_array_equal(result.indices, system.lineage_indices(k))
    np.testing.assert_array_equal(result.trajectory, system.lineage_states(k))


def test_mixing_smoke_two_particles():
    model, theta, x = lg_setup(t_count=5)
    cfg = CsmcConfig(2, backward_sampling=True)
    rng = RngStream(77)
    current = x.copy()
    changed = 0
    for i in range(1000):
        out = csmc_kernel(ModelTarget(model, theta), current, cfg, rng.child(i))
        if not np.array_equal(out.trajectory, current):
            changed += 1
        current = out.trajectory
    assert changed / 1000 > 0.01


# ---------------------------------------------------------------------------
# backward evaluators agree
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("builder", ["lg", "discrete"])
def test_markov_and_full_path_backward_weights_agree(builder):
    if builder == "lg":
        model, theta, ref = lg_setup(t_count=6, seed=8)
    else:
        model = make_toy_model(t_count=6, seed=8)
        theta = 0
        ref = np.zeros(6)
    result = csmc_kernel(ModelTarget(model, theta), ref, CsmcConfig(5), RngStream(40))
    system = result.system
    markov = MarkovTailEvaluator(model, theta, system.states)
    full = FullPathTailEvaluator(model, theta, system)
    tail = result.trajectory
    for t in range(system.horizon - 1, -1, -1):
        lw = system.log_weights[t]
        w_markov = normalize_log_weights(lw + markov.log_ratios(t, tail[t + 1 :]))
        w_full = normalize_log_weights(lw + full.log_ratios(t, tail[t + 1 :]))
        np.testing.assert_allclose(w_markov, w_full, atol=1e-12)


def test_backward_pass_forced_path_returns_reference():
    model, theta, x = lg_setup(t_count=4)
    target = RefOnlyTargetAllSteps(ModelTarget(model, theta))
    cfg = CsmcConfig(2, backward_sampling=True)
    result = csmc_kernel(target, x, cfg, RngStream(9))
    np.testing.assert_array_equal(result.trajectory, x)


class RefOnlyTargetAllSteps(CsmcTarget):
    """Non-reference particles carry zero weight at every step."""

    def __init__(self, base: ModelTarget):
        self.base = base
        self.horizon = base.horizon

    def sample_initial(self, n, rng):
        return self.base.sample_initial(n, rng)

    def _kill(self, logg):
        logg = logg.copy()
        logg[1:] = -np.inf
        return logg

    def score_initial(self, x0):
        logg, aux = self.base.score_initial(x0)
        return self._kill(logg), aux

    def sample_step(self, t, x_prev, aux, rng):
        return self.base.sample_step(t, x_prev, aux, rng)

    def score_step(self, t, x_prev, x_new, aux):
        logg, aux = self.base.score_step(t, x_prev, x_new, aux)
        return self._kill(logg), aux

    def backward_evaluator(self, system, aux_history):
        return self.base.backward_evaluator(system, aux_history)


def test_backward_collapse_error_carries_step():
    model, theta, x = lg_setup(t_count=4)
    result = csmc_kernel(ModelTarget(model, theta), x, CsmcConfig(4), RngStream(2))
    system = result.system

    class DeadEvaluator:
        def log_ratios(self, t, tail):
            return np.full(system.n_particles, -np.inf)

        def select(self, t, k):
            pass

    system.log_weights[:] = -np.inf
    with pytest.raises(WeightCollapseError) as err:
        backward_sampling_pass(system, 0, DeadEvaluator(), RngStream(0))
    assert err.value.step == system.horizon - 1


def test_config_validation():
    with pytest.raises(ValueError):
        CsmcConfig(1)
    with pytest.raises(ValueError):
        CsmcConfig(4, terminal_selection="nonsense")
    with pytest.raises(ValueError):
        csmc_kernel(ModelTarget(LinearGaussianSSM([0.0, 1.0]), ThetaVector(0.5, 1, 1)), np.zeros(5), CsmcConfig(2), RngStream(0))
