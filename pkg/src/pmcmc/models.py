"""Sequential model abstractions: per-step transitions and potentials.

A model defines, for t = 0..T, a transition density p_t(x_t | x_{t-1}, theta)
(p_0 is the initial distribution) and a potential g_t evaluated on the step
pair (x_{t-1}, x_t). State-space models use the observation likelihood as the
potential. The interface accepts path dependence through the potential's
step-pair form plus the auxiliary-state threading in the CSMC module; the
instances shipped here are Markov.

Implementations are immutable after construction and safe to share across
threads; all operations are pure given an explicit RngStream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .numerics import log_invgamma_pdf, log_normal_pdf
from .rng import RngStream

LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class Trajectory:
    """A latent path x_{0:T}, stored as a length-(T+1) float array."""

    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 1 or states.size < 1:
            raise ValueError("trajectory must be a nonempty 1-D state sequence")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states must be finite")
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.states.size

    @property
    def horizon(self) -> int:
        return self.states.size - 1


@dataclass(frozen=True)
class ThetaVector:
    """Parameter point (rho, sigma2_x, sigma2_y) for the AR(1)-plus-noise model."""

    rho: float
    sigma2_x: float
    sigma2_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.sigma2_x, self.sigma2_y], dtype=float)

    @staticmethod
    def from_array(arr) -> "ThetaVector":
        a = np.asarray(arr, dtype=float)
        return ThetaVector(float(a[0]), float(a[1]), float(a[2]))

    def in_support(self) -> bool:
        return abs(self.rho) <= 1.0 and self.sigma2_x > 0.0 and self.sigma2_y > 0.0


class ParametricModel:
    """Interface shared by all sequential models.

    State arguments are numpy arrays so a whole particle population is
    evaluated per call; ``x_prev`` is None at t = 0. ``theta`` is whatever
    parameter object the concrete model understands.
    """

    horizon: int

    def log_prior(self, theta) -> float:
        raise NotImplementedError

    def sample_x0(self, theta, n: int, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def log_p0(self, x0, theta) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, t: int, x_prev, theta, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def log_transition(self, t: int, x_prev, x_new, theta) -> np.ndarray:
        raise NotImplementedError

    def log_potential(self, t: int, x_prev, x_new, theta) -> np.ndarray:
        raise NotImplementedError


class LinearGaussianSSM(ParametricModel):
    """AR(1) latent state observed in Gaussian noise.

    Transition N(x_t | rho x_{t-1}, sigma2_x), observation N(y_t | x_t,
    sigma2_y). The initial distribution is the stationary law
    N(0, sigma2_x / (1 - rho^2)) when |rho| < 1, or N(0, sigma2_x) in
    fixed-variance mode (also the fallback at |rho| >= 1).

    Priors: rho ~ Uniform[-1, 1], sigma2_x ~ InvGamma(2, 2),
    sigma2_y ~ InvGamma(2, 2).
    """

    def __init__(self, observations, init: str = "stationary"):
        y = np.asarray(observations, dtype=float)
        if y.ndim != 1 or y.size < 1:
            raise ValueError("observations must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        if init not in ("stationary", "fixed"):
            raise ValueError(f"unknown init mode {init!r}")
        self.y = y
        self.init = init
        self.horizon = y.size - 1

    def initial_variance(self, theta: ThetaVector) -> float:
        if self.init == "stationary" and abs(theta.rho) < 1.0:
            return theta.sigma2_x / (1.0 - theta.rho * theta.rho)
        return theta.sigma2_x

    def log_prior(self, theta: ThetaVector) -> float:
        if not theta.in_support():
            return -np.inf
        return (
            LOG_HALF
            + log_invgamma_pdf(theta.sigma2_x, 2.0, 2.0)
            + log_invgamma_pdf(theta.sigma2_y, 2.0, 2.0)
        )

    def sample_prior_theta(self, rng: RngStream) -> ThetaVector:
        rho = 2.0 * rng.uniform() - 1.0
        # inverse-gamma(shape=2, rate=2) via 2 / Gamma(2, 1)
        s2x = 2.0 / float(rng.gamma(2.0))
        s2y = 2.0 / float(rng.gamma(2.0))
        return ThetaVector(float(rho), s2x, s2y)

    def sample_x0(self, theta: ThetaVector, n: int, rng: RngStream) -> np.ndarray:
        return math.sqrt(self.initial_variance(theta)) * rng.normal(n)

    def log_p0(self, x0, theta: ThetaVector) -> np.ndarray:
        return log_normal_pdf(x0, 0.0, self.initial_variance(theta))

    def sample_transition(self, t, x_prev, theta: ThetaVector, rng: RngStream) -> np.ndarray:
        x_prev = np.asarray(x_prev, dtype=float)
        return theta.rho * x_prev + math.sqrt(theta.sigma2_x) * rng.normal(x_prev.shape)

    def log_transition(self, t, x_prev, x_new, theta: ThetaVector) -> np.ndarray:
        return log_normal_pdf(x_new, theta.rho * np.asarray(x_prev, dtype=float), theta.sigma2_x)

    def log_potential(self, t, x_prev, x_new, theta: ThetaVector) -> np.ndarray:
        return log_normal_pdf(self.y[t], np.asarray(x_new, dtype=float), theta.sigma2_y)

    # Batched evaluation over a parameter stack. These bypass the per-theta
    # methods for speed; subclasses that change the densities must override
    # them too.
    def make_theta_stack(self, thetas, valid):
        """Precomputed per-theta constants for the batched density paths."""
        rho = np.array([th.rho if ok else 0.0 for th, ok in zip(thetas, valid)])
        s2x = np.array([th.sigma2_x if ok else 1.0 for th, ok in zip(thetas, valid)])
        s2y = np.array([th.sigma2_y if ok else 1.0 for th, ok in zip(thetas, valid)])
        p0 = np.array([self.initial_variance(th) if ok else 1.0 for th, ok in zip(thetas, valid)])
        dead = ~np.asarray(valid, dtype=bool)
        half_log = -0.5 * math.log(2.0 * math.pi)
        return {
            "rho": rho,
            "c_trans": half_log - 0.5 * np.log(s2x),
            "inv_trans": -0.5 / s2x,
            "c_pot": half_log - 0.5 * np.log(s2y),
            "inv_pot": -0.5 / s2y,
            "c_init": half_log - 0.5 * np.log(p0),
            "inv_init": -0.5 / p0,
            "dead": dead if dead.any() else None,
        }

    def density_matrices(self, t, x_prev, x_new, thetas, valid, stack=None):
        """(transition, potential) log-densities, shape (n, M), -inf on invalid slots."""
        if stack is None:
            stack = self.make_theta_stack(thetas, valid)
        x_new = np.atleast_1d(np.asarray(x_new, dtype=float))[:, None]
        if t == 0:
            trans = stack["c_init"] + stack["inv_init"] * x_new * x_new
        else:
            x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))[:, None]
            d = x_new - stack["rho"] * x_prev
            trans = stack["c_trans"] + stack["inv_trans"] * d * d
        e = self.y[t] - x_new
        pot = stack["c_pot"] + stack["inv_pot"] * e * e
        if stack["dead"] is not None:
            trans[:, stack["dead"]] = -np.inf
            pot[:, stack["dead"]] = -np.inf
        return trans, pot

    def path_density_matrix(self, states, thetas, valid, stack=None):
        """Cumulative-step matrix for a single path: entry [j] sums all steps under theta j."""
        if stack is None:
            stack = self.make_theta_stack(thetas, valid)
        states = np.asarray(states, dtype=float)
        out = stack["c_init"] + stack["inv_init"] * states[0] * states[0]
        d = states[1:, None] - stack["rho"] * states[:-1, None]
        out = out + (states.size - 1) * stack["c_trans"] + stack["inv_trans"] * np.sum(d * d, axis=0)
        e = self.y[: states.size, None] - states[:, None]
        out = out + states.size * stack["c_pot"] + stack["inv_pot"] * np.sum(e * e, axis=0)
        if stack["dead"] is not None:
            out[stack["dead"]] = -np.inf
        return out

    def backward_link_matrix(self, t, x_prev, x_next, thetas, valid, stack=None):
        """Junction log-densities p_t(x_next | x_prev, theta) g_t for a fixed x_next."""
        if stack is None:
            stack = self.make_theta_stack(thetas, valid)
        d = x_next - stack["rho"] * np.asarray(x_prev, dtype=float)[:, None]
        links = stack["c_trans"] + stack["inv_trans"] * d * d
        e = self.y[t] - x_next
        links += stack["c_pot"] + stack["inv_pot"] * e * e
        if stack["dead"] is not None:
            links[:, stack["dead"]] = 0.0  # dead columns are masked by the posterior
        return links

    def sample_x0_mixture(self, thetas, weights, n: int, rng: RngStream) -> np.ndarray:
        # out-of-support slots carry zero weight and are never drawn; their
        # placeholder scale just has to be a valid float
        comp = rng.categorical_vector(np.asarray(weights, dtype=float), n)
        p0 = np.array([self.initial_variance(th) if th.in_support() else 1.0 for th in thetas])
        return np.sqrt(p0[comp]) * rng.normal(n)

    def sample_transition_mixture(self, t, x_prev, thetas, weight_rows, rng: RngStream) -> np.ndarray:
        comp = rng.categorical_rows(np.asarray(weight_rows, dtype=float))
        rho = np.array([th.rho for th in thetas])
        sx = np.array([math.sqrt(th.sigma2_x) if th.sigma2_x > 0 else 1.0 for th in thetas])
        x_prev = np.asarray(x_prev, dtype=float)
        return rho[comp] * x_prev + sx[comp] * rng.normal(x_prev.shape)

    def closed_form_transition_mixture(self, t, x_prev, u, step: float, scale) -> tuple:
        """Gaussian transition integrated over the rho-component of q(theta | u).

        With rho ~ N(u_rho, (step/2) * scale_rho) the transition mean is linear
        in rho, so x_t | x_{t-1} ~ N(u_rho x_{t-1}, s2x + (step/2) scale_rho x^2).
        The variance component uses u's value directly (floored away from 0);
        this is a proposal density, not the model transition.
        """
        x_prev = np.asarray(x_prev, dtype=float)
        u = np.asarray(u, dtype=float)
        scale = np.asarray(scale, dtype=float)
        mean = u[0] * x_prev
        var = max(u[1], 0.0) + 0.5 * step * scale[0] * x_prev * x_prev + 1e-12
        return mean, var


class DiscreteToySSM(ParametricModel):
    """Finite-state, finite-parameter model used as an enumeration substrate.

    theta is an index j into a grid of parameter points; each point carries an
    initial distribution, a transition matrix over K states, and per-step
    potential weights. Exact normalizing constants, smoothing laws, and kernel
    matrices are computable by brute force, which is what the invariance tests
    lean on.
    """

    def __init__(self, init_probs, trans, potentials, theta_log_prior=None):
        init_probs = np.asarray(init_probs, dtype=float)
        trans = np.asarray(trans, dtype=float)
        potentials = np.asarray(potentials, dtype=float)
        if init_probs.ndim != 2:
            raise ValueError("init_probs must have shape (n_theta, K)")
        n_theta, k = init_probs.shape
        if trans.shape != (n_theta, k, k):
            raise ValueError("trans must have shape (n_theta, K, K)")
        if potentials.ndim != 3 or potentials.shape[0] != n_theta or potentials.shape[2] != k:
            raise ValueError("potentials must have shape (n_theta, T+1, K)")
        if np.any(potentials < 0):
            raise ValueError("potentials must be nonnegative")
        for name, rows in (("init_probs", init_probs.reshape(n_theta, k)), ("trans", trans.reshape(-1, k))):
            if np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError(f"{name} rows must be probability vectors")
        self.init_probs = init_probs
        self.trans = trans
        self.potentials = potentials
        self.n_states = k
        self.n_theta = n_theta
        self.horizon = potentials.shape[1] - 1
        if theta_log_prior is None:
            theta_log_prior = np.full(n_theta, -math.log(n_theta))
        self.theta_log_prior = np.asarray(theta_log_prior, dtype=float)
        with np.errstate(divide="ignore"):
            self._log_init = np.log(init_probs)
            self._log_trans = np.log(trans)
            self._log_pot = np.log(potentials)

    def log_prior(self, theta: int) -> float:
        if not 0 <= theta < self.n_theta:
            return -np.inf
        return float(self.theta_log_prior[theta])

    def sample_x0(self, theta: int, n: int, rng: RngStream) -> np.ndarray:
        p = self.init_probs[theta]
        return np.array([rng.categorical(p) for _ in range(n)], dtype=float)

    def log_p0(self, x0, theta: int) -> np.ndarray:
        return self._log_init[theta][np.asarray(x0, dtype=int)]

    def sample_transition(self, t, x_prev, theta: int, rng: RngStream) -> np.ndarray:
        rows = self.trans[theta]
        return np.array([rng.categorical(rows[int(xi)]) for xi in np.atleast_1d(x_prev)], dtype=float)

    def log_transition(self, t, x_prev, x_new, theta: int) -> np.ndarray:
        return self._log_trans[theta][np.asarray(x_prev, dtype=int), np.asarray(x_new, dtype=int)]

    def log_potential(self, t, x_prev, x_new, theta: int) -> np.ndarray:
        return self._log_pot[theta][t, np.asarray(x_new, dtype=int)]

    def density_matrices(self, t, x_prev, x_new, thetas, valid, stack=None):
        jarr = np.asarray(thetas, dtype=int)
        xn = np.atleast_1d(np.asarray(x_new, dtype=int))
        if t == 0:
            trans = self._log_init[jarr][:, xn].T
        else:
            xp = np.atleast_1d(np.asarray(x_prev, dtype=int))
            trans = self._log_trans[jarr][:, xp, xn].T
        pot = self._log_pot[jarr][:, t, :][:, xn].T
        if not all(valid):
            dead = ~np.asarray(valid, dtype=bool)
            trans = trans.copy()
            pot = pot.copy()
            trans[:, dead] = -np.inf
            pot[:, dead] = -np.inf
        return trans, pot

    def path_density_matrix(self, states, thetas, valid, stack=None):
        states = np.asarray(states, dtype=int)
        jarr = np.asarray(thetas, dtype=int)
        out = self._log_init[jarr][:, states[0]]
        out = out + self._log_trans[jarr][:, states[:-1], states[1:]].sum(axis=1)
        out = out + self._log_pot[jarr][:, np.arange(states.size), states].sum(axis=1)
        out = np.where(np.asarray(valid, dtype=bool), out, -np.inf)
        return out

    def sample_x0_mixture(self, thetas, weights, n: int, rng: RngStream) -> np.ndarray:
        """Draw from the finite mixture of initial laws in one categorical per particle.

        Collapsing the component choice keeps enumeration trees small; the law
        is identical to drawing a component first.
        """
        row = sum(w * self.init_probs[int(j)] for j, w in zip(thetas, weights) if w > 0)
        return np.array([rng.categorical(row) for _ in range(n)], dtype=float)

    def sample_transition_mixture(self, t, x_prev, thetas, weight_rows, rng: RngStream) -> np.ndarray:
        """Per-particle draw from the theta-mixture of transition rows."""
        out = np.empty(len(x_prev))
        weight_rows = np.asarray(weight_rows, dtype=float)
        for i, xi in enumerate(np.asarray(x_prev, dtype=int)):
            row = sum(
                w * self.trans[int(j)][xi] for j, w in zip(thetas, weight_rows[i]) if w > 0
            )
            out[i] = rng.categorical(row)
        return out

    def all_trajectories(self) -> np.ndarray:
        """All K^(T+1) state paths, one per row (enumeration helper)."""
        grids = np.meshgrid(*[np.arange(self.n_states)] * (self.horizon + 1), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(float)


def log_gamma(model: ParametricModel, traj: Trajectory, theta, t: int | None = None) -> float:
    """Unnormalized path log-density sum_{s<=t} [log p_s + log g_s], prior excluded.

    Empty-product convention at t = 0: only the initial density and potential
    contribute.
    """
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if not np.all(np.isfinite(states)):
        raise ValueError("trajectory states must be finite")
    if t is None:
        t = model.horizon
    if t > model.horizon:
        raise ValueError(f"step {t} beyond model horizon {model.horizon}")
    if states.size < t + 1:
        raise ValueError("trajectory shorter than requested step")
    x0 = states[0:1]
    total = float(model.log_p0(x0, theta)[0]) + float(model.log_potential(0, None, x0, theta)[0])
    for s in range(1, t + 1):
        xp, xn = states[s - 1 : s], states[s : s + 1]
        total += float(model.log_transition(s, xp, xn, theta)[0])
        total += float(model.log_potential(s, xp, xn, theta)[0])
    return total


def simulate_lgssm(theta: ThetaVector, t_count: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Simulate states and observations of length t_count from the linear-Gaussian model."""
    if t_count < 1:
        raise ValueError("need at least one observation")
    if not theta.in_support() or abs(theta.rho) >= 1.0:
        raise ValueError("data generation requires |rho| < 1 and positive variances")
    x = np.empty(t_count)
    x[0] = math.sqrt(theta.sigma2_x / (1.0 - theta.rho**2)) * rng.normal()
    noise = math.sqrt(theta.sigma2_x) * rng.normal(t_count - 1)
    for t in range(1, t_count):
        x[t] = theta.rho * x[t - 1] + noise[t - 1]
    y = x + math.sqrt(theta.sigma2_y) * rng.normal(t_count)
    return x, y


def load_observations(path) -> np.ndarray:
    """Read a `t,y` CSV (one observation per line, header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["t", "y"]:
            raise ValueError(f"{path}: expected header 't,y'")
        rows = [(int(r[0]), float(r[1])) for r in reader if r]
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: time indices must be 0..T without gaps")
    return np.array([r[1] for r in rows], dtype=float)


def save_observations(path, y) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y"])
        for t, val in enumerate(np.asarray(y, dtype=float)):
            writer.writerow([t, repr(float(val))])
