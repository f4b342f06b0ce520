"""Seedable random streams and categorical/multinomial sampling.

Every random decision in the package flows through an RngStream so that

* runs are reproducible bit-for-bit given (seed, stream),
* independent consumers (resampling, proposals, index selection) can be
  given child streams whose draws never perturb each other, and
* tests can substitute a stream that enumerates discrete outcomes instead
  of sampling them.
"""

from __future__ import annotations

import numpy as np

from .numerics import normalize_log_weights


class RngStream:
    """A named, reproducible random stream.

    Identical (seed, stream) pairs produce identical draw sequences across
    runs and thread schedules. ``child(k)`` derives an independent stream
    deterministically, so adding a consumer never shifts the draws seen by
    existing ones. A single stream must not be drawn from concurrently.
    """

    __slots__ = ("seed", "stream", "_path", "_gen")

    def __init__(self, seed: int, stream: int = 0, _path: tuple = ()):
        self.seed = int(seed)
        self.stream = int(stream)
        self._path = _path
        key = (self.stream,) + _path
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.stream, self._path + (int(k),))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def gamma(self, shape: float, size=None):
        return self._gen.gamma(shape, size=size)

    def categorical(self, w) -> int:
        """One draw from Cat(w) by inverse CDF: smallest i with u < cumsum(w)[i]."""
        cum = np.cumsum(np.asarray(w, dtype=float))
        u = self._gen.random() * cum[-1]
        return int(np.searchsorted(cum, u, side="right"))

    def categorical_vector(self, w, count: int) -> np.ndarray:
        """``count`` iid draws from Cat(w), same tie-breaking as categorical()."""
        cum = np.cumsum(np.asarray(w, dtype=float))
        u = self._gen.random(count) * cum[-1]
        return np.searchsorted(cum, u, side="right").astype(np.int64)

    def categorical_rows(self, w_rows: np.ndarray) -> np.ndarray:
        """One draw per row of a stack of simplexes."""
        w_rows = np.asarray(w_rows, dtype=float)
        cum = np.cumsum(w_rows, axis=1)
        u = self._gen.random(w_rows.shape[0]) * cum[:, -1]
        return (u[:, None] >= cum).sum(axis=1).astype(np.int64)

    def bernoulli(self, p: float) -> bool:
        return bool(self.categorical([1.0 - p, p]))

    def __repr__(self):  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream={self.stream}, path={self._path})"


def validate_simplex(w, tol: float = 1e-12) -> np.ndarray:
    """Check nonnegativity and unit total; returns the simplex as an array."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("simplex must be a nonempty 1-D array")
    if np.any(np.isnan(w)) or np.any(w < 0.0):
        raise ValueError("simplex entries must be nonnegative")
    if abs(float(w.sum()) - 1.0) > max(tol, 1e-9 * w.size):
        raise ValueError(f"simplex sums to {w.sum()!r}, not 1")
    return w


def sample_categorical(w, rng: RngStream) -> int:
    """Draw an index with probability w_i from a validated simplex."""
    return rng.categorical(validate_simplex(w))


def multinomial_ancestors(w, count: int, rng: RngStream) -> np.ndarray:
    """``count`` conditionally independent categorical draws (multinomial resampling)."""
    if count <= 0:
        raise ValueError("count must be positive")
    return rng.categorical_vector(validate_simplex(w), count)


def resample_from_log_weights(logw, count: int, rng: RngStream) -> np.ndarray:
    return multinomial_ancestors(normalize_log_weights(logw), count, rng)
