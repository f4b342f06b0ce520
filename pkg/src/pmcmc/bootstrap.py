"""Bootstrap particle filter and its unbiased normalizing-constant estimator.

The filter proposes from the model transition, weights by the potential, and
resamples multinomially at every step, so

    log Z_hat = sum_t log( mean_n exp(log g_t(x^n_t)) )

is an unbiased estimator of Z_T(theta) in the natural scale. Resampling every
step (rather than adaptively) keeps the estimator's law simple, which is what
the pseudo-marginal acceptance step relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .numerics import WeightCollapseError, log_sum_exp, normalize_log_weights
from .rng import RngStream


@dataclass
class FilterOutput:
    """Terminal filter state: log Z estimate, particles, and normalized weights.

    ``states_history`` and ``ancestry`` are populated only when the filter is
    run with keep_history=True (needed to trace a trajectory draw).
    """

    log_z_estimate: float
    particles: np.ndarray
    weights: np.ndarray
    states_history: np.ndarray | None = None
    ancestry: np.ndarray | None = None

    def sample_trajectory(self, rng: RngStream) -> np.ndarray:
        """Draw one ancestral path, terminal index ~ Cat(W_T)."""
        if self.states_history is None or self.ancestry is None:
            raise ValueError("filter was run without keep_history")
        t_count, _ = self.states_history.shape
        path = np.empty(t_count)
        k = rng.categorical(self.weights)
        for t in range(t_count - 1, 0, -1):
            path[t] = self.states_history[t, k]
            k = int(self.ancestry[t - 1, k])
        path[0] = self.states_history[0, k]
        return path


def bootstrap_filter(
    model,
    theta,
    n_particles: int,
    rng: RngStream,
    keep_history: bool = False,
) -> FilterOutput:
    if n_particles < 1:
        raise ValueError("need at least one particle")
    rng_re = rng.child(0)
    rng_prop = rng.child(1)
    t_count = model.horizon + 1
    log_n = math.log(n_particles)

    x = np.asarray(model.sample_x0(theta, n_particles, rng_prop), dtype=float)
    logw = np.asarray(model.log_potential(0, None, x, theta), dtype=float)
    history = np.empty((t_count, n_particles)) if keep_history else None
    ancestry = np.empty((t_count - 1, n_particles), dtype=np.int64) if keep_history else None
    if keep_history:
        history[0] = x

    log_z = 0.0
    for t in range(0, t_count):
        if t > 0:
            try:
                w = normalize_log_weights(logw)
            except WeightCollapseError:
                raise WeightCollapseError(f"all particle weights collapsed at step {t - 1}", step=t - 1)
            idx = rng_re.categorical_vector(w, n_particles)
            parents = x[idx]
            x = np.asarray(model.sample_transition(t, parents, theta, rng_prop), dtype=float)
            logw = np.asarray(model.log_potential(t, parents, x, theta), dtype=float)
            if keep_history:
                history[t] = x
                ancestry[t - 1] = idx
        total = log_sum_exp(logw)
        if total == -np.inf:
            raise WeightCollapseError(f"all particle weights collapsed at step {t}", step=t)
        log_z += total - log_n

    return FilterOutput(
        log_z_estimate=float(log_z),
        particles=x,
        weights=normalize_log_weights(logw),
        states_history=history,
        ancestry=ancestry,
    )
