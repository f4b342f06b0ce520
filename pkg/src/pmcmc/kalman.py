"""Exact inference for the scalar linear-Gaussian model.

Implements the filter (marginal likelihood), the RTS smoother, and exact
posterior trajectory draws by forward filtering / backward sampling. These
are the ground-truth oracles against which the particle kernels are checked;
the recursions are written with plain floats so results are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .models import ThetaVector
from .rng import RngStream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KalmanCache:
    """Per-step filter quantities: predictive and filtered moments, step log-likelihoods."""

    pred_mean: np.ndarray
    pred_var: np.ndarray
    filt_mean: np.ndarray
    filt_var: np.ndarray
    incr_loglik: np.ndarray

    @property
    def loglik(self) -> float:
        return float(self.incr_loglik.sum())


def _initial_variance(theta: ThetaVector, init: str) -> float:
    if init == "stationary" and abs(theta.rho) < 1.0:
        return theta.sigma2_x / (1.0 - theta.rho * theta.rho)
    return theta.sigma2_x


def kalman_filter(theta: ThetaVector, y, init: str = "stationary") -> KalmanCache:
    if not theta.in_support():
        raise ValueError("theta outside prior support")
    y = np.asarray(y, dtype=float)
    n = y.size
    rho, s2x = theta.rho, theta.sigma2_x
    s2y = theta.sigma2_y
    pred_mean = np.empty(n)
    pred_var = np.empty(n)
    filt_mean = np.empty(n)
    filt_var = np.empty(n)
    incr = np.empty(n)
    mp, vp = 0.0, _initial_variance(theta, init)
    ys = y.tolist()
    for t in range(n):
        s = vp + s2y
        resid = ys[t] - mp
        incr[t] = -0.5 * (_LOG_2PI + math.log(s) + resid * resid / s)
        gain = vp / s
        mf = mp + gain * resid
        vf = (1.0 - gain) * vp
        pred_mean[t], pred_var[t] = mp, vp
        filt_mean[t], filt_var[t] = mf, vf
        mp = rho * mf
        vp = rho * rho * vf + s2x
    return KalmanCache(pred_mean, pred_var, filt_mean, filt_var, incr)


def kalman_loglik(theta: ThetaVector, y, init: str = "stationary") -> float:
    """Exact log p(y_{0:T} | theta); -inf outside the prior support by convention."""
    if not theta.in_support():
        return -np.inf
    return kalman_filter(theta, y, init).loglik


def smoother_moments(theta: ThetaVector, y, init: str = "stationary") -> tuple[np.ndarray, np.ndarray]:
    """RTS smoothed means and variances per step."""
    cache = kalman_filter(theta, y, init)
    n = cache.filt_mean.size
    rho = theta.rho
    means = np.empty(n)
    variances = np.empty(n)
    means[-1] = cache.filt_mean[-1]
    variances[-1] = cache.filt_var[-1]
    for t in range(n - 2, -1, -1):
        gain = cache.filt_var[t] * rho / cache.pred_var[t + 1]
        means[t] = cache.filt_mean[t] + gain * (means[t + 1] - cache.pred_mean[t + 1])
        variances[t] = cache.filt_var[t] + gain * gain * (variances[t + 1] - cache.pred_var[t + 1])
    return means, variances


def ffbs_sample(theta: ThetaVector, y, rng: RngStream, init: str = "stationary") -> np.ndarray:
    """One exact draw from the joint smoothing distribution p(x_{0:T} | y, theta)."""
    cache = kalman_filter(theta, y, init)
    n = cache.filt_mean.size
    rho = theta.rho
    draws = rng.normal(n)
    x = np.empty(n)
    x[-1] = cache.filt_mean[-1] + math.sqrt(cache.filt_var[-1]) * draws[-1]
    for t in range(n - 2, -1, -1):
        gain = cache.filt_var[t] * rho / cache.pred_var[t + 1]
        mean = cache.filt_mean[t] + gain * (x[t + 1] - cache.pred_mean[t + 1])
        var = cache.filt_var[t] - gain * gain * cache.pred_var[t + 1]
        x[t] = mean + math.sqrt(max(var, 0.0)) * draws[t]
    return x
