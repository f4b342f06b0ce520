"""Log-space numeric utilities shared by every sampler module.

All densities in this package are handled in log space end to end;
probabilities are materialized only at sampling points.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class WeightCollapseError(RuntimeError):
    """Raised when a weight vector has no support left (all log-weights -inf).

    ``step`` carries the time index at which the collapse occurred when the
    caller knows it (particle filters, backward passes), else None.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) with the subtract-max trick.

    Exact for the max element: the largest entry contributes exp(0) = 1, so
    shifting by a constant shifts the output by exactly that constant.
    Returns -inf when every entry is -inf.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of empty sequence")
    m = np.max(v)
    if not np.isfinite(m):
        if m == -np.inf:
            return -np.inf
        raise ValueError("log_sum_exp of non-finite input")
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_over_axis(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorized log-sum-exp; rows with no support map to -inf."""
    return np.logaddexp.reduce(np.asarray(values, dtype=float), axis=axis)


def log_mean_exp(values) -> float:
    v = np.asarray(values, dtype=float)
    return log_sum_exp(v) - math.log(v.size)


def normalize_log_weights(logw) -> np.ndarray:
    """Exponentiate and normalize log-weights into a simplex.

    Raises WeightCollapseError when the total weight vanishes (all entries
    -inf), which signals that no particle has support.
    """
    v = np.asarray(logw, dtype=float)
    if v.size == 0:
        raise ValueError("cannot normalize an empty weight vector")
    m = v.max()
    if not m > -np.inf:
        if m == -np.inf:
            raise WeightCollapseError("total weight collapsed: all log-weights are -inf")
        raise ValueError("NaN log-weight")
    w = np.exp(v - m)
    return w / w.sum()


def normalize_log_rows(logw: np.ndarray) -> np.ndarray:
    """Row-wise log-space normalization, returning normalized *log* weights."""
    totals = log_sum_exp_over_axis(logw, axis=-1)
    if np.any(totals == -np.inf):
        raise WeightCollapseError("a row of log-weights has no support")
    return logw - totals[..., None]


def log_normal_pdf(x, mean, var):
    """Gaussian log-density, broadcasting over all arguments."""
    x = np.asarray(x, dtype=float)
    d = x - mean
    return -0.5 * (LOG_2PI + np.log(var) + d * d / var)


def log_invgamma_pdf(x: float, shape: float, rate: float) -> float:
    """Inverse-gamma log-density with shape/rate parametrization; -inf off support."""
    if x <= 0.0:
        return -np.inf
    return shape * math.log(rate) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - rate / x
