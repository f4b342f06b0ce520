"""Shared test oracles.

The enumeration harness drives the *actual* kernels through every discrete
random outcome: an EnumerationRng stands in for RngStream, replaying a
scripted choice at each categorical decision and recording its probability,
while the driver advances an odometer over the decision tree. Summing path
probabilities per outcome yields the kernel's exact transition law, which is
compared against brute-force target distributions computed directly from the
model tables (independent of the library's density code).
"""

from __future__ import annotations

import math

import numpy as np

from pmcmc.models import DiscreteToySSM


class EnumerationRng:
    """Drop-in for RngStream that replays scripted discrete choices.

    Only categorical-flavored draws are supported; kernels that are run under
    enumeration must not consume continuous randomness.
    """

    def __init__(self, script: list):
        self.script = script  # positions into the positive-probability option list
        self.sizes: list[int] = []
        self.pos = 0
        self.log_prob = 0.0

    def child(self, k: int) -> "EnumerationRng":
        return self

    def categorical(self, w) -> int:
        w = np.asarray(w, dtype=float)
        p = w / w.sum()
        options = np.flatnonzero(p > 0)
        if self.pos < len(self.script):
            sel = self.script[self.pos]
        else:
            sel = 0
            self.script.append(0)
        self.sizes.append(options.size)
        self.pos += 1
        choice = int(options[sel])
        self.log_prob += math.log(p[choice])
        return choice

    def categorical_vector(self, w, count: int) -> np.ndarray:
        return np.array([self.categorical(w) for _ in range(count)], dtype=np.int64)

    def categorical_rows(self, w_rows) -> np.ndarray:
        return np.array([self.categorical(row) for row in np.asarray(w_rows, dtype=float)], dtype=np.int64)

    def bernoulli(self, p: float) -> bool:
        return bool(self.categorical([1.0 - p, p]))

    def uniform(self, size=None):
        raise RuntimeError("enumeration supports discrete draws only")

    normal = uniform
    gamma = uniform


def enumerate_outcomes(run) -> dict:
    """Exact outcome law of ``run(rng)``: maps outcome -> probability."""
    results: dict = {}
    script: list[int] = []
    while True:
        rng = EnumerationRng(script)
        outcome = run(rng)
        results[outcome] = results.get(outcome, 0.0) + math.exp(rng.log_prob)
        i = len(script) - 1
        while i >= 0 and script[i] + 1 >= rng.sizes[i]:
            i -= 1
        if i < 0:
            break
        script = script[: i + 1]
        script[i] += 1
    return results


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# Brute-force laws for the discrete toy model (independent of library code)
# ---------------------------------------------------------------------------


def discrete_gamma(model: DiscreteToySSM, path, j: int) -> float:
    """Unnormalized path density under parameter index j, straight from the tables."""
    path = [int(v) for v in path]
    value = model.init_probs[j][path[0]] * model.potentials[j][0, path[0]]
    for t in range(1, len(path)):
        value *= model.trans[j][path[t - 1], path[t]] * model.potentials[j][t, path[t]]
    return float(value)


def discrete_trajectory_target(model: DiscreteToySSM, j: int) -> dict:
    """Normalized smoothing law over all paths for fixed parameter index j."""
    paths = [tuple(int(v) for v in row) for row in model.all_trajectories()]
    gammas = np.array([discrete_gamma(model, p, j) for p in paths])
    gammas /= gammas.sum()
    return dict(zip(paths, gammas))


def discrete_joint_target(model: DiscreteToySSM) -> dict:
    """Normalized law over (path, parameter index) pairs: prior times gamma."""
    paths = [tuple(int(v) for v in row) for row in model.all_trajectories()]
    out = {}
    for j in range(model.n_theta):
        prior = math.exp(model.theta_log_prior[j])
        for p in paths:
            out[(p, j)] = prior * discrete_gamma(model, p, j)
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}


def stationary_flow(pi: dict, kernel_rows: dict) -> dict:
    """(pi K)(x') = sum_x pi(x) K(x' | x)."""
    out: dict = {}
    for x, row in kernel_rows.items():
        px = pi[x]
        for x_new, prob in row.items():
            out[x_new] = out.get(x_new, 0.0) + px * prob
    return out


def make_toy_model(
    t_count: int = 3,
    n_states: int = 2,
    n_theta: int = 2,
    seed: int = 7,
    flat_potentials: bool = False,
) -> DiscreteToySSM:
    """A deliberately lopsided discrete instance (nothing symmetric to hide behind)."""
    gen = np.random.default_rng(seed)

    def rows(shape):
        raw = gen.uniform(0.2, 1.0, size=shape)
        return raw / raw.sum(axis=-1, keepdims=True)

    init = rows((n_theta, n_states))
    trans = rows((n_theta, n_states, n_states))
    if flat_potentials:
        pot = np.ones((n_theta, t_count, n_states))
    else:
        pot = gen.uniform(0.3, 1.2, size=(n_theta, t_count, n_states))
    return DiscreteToySSM(init, trans, pot)
