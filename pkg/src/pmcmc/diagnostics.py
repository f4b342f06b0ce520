"""Chain efficiency diagnostics: acceptance rate, IACT, effective sample size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def acceptance_rate(records, burn_in: int = 0) -> float:
    """Fraction of post-burn-in iterations that moved."""
    flags = np.asarray([r.accepted if hasattr(r, "accepted") else r for r in records], dtype=bool)
    if burn_in >= flags.size:
        raise ValueError("burn-in leaves no iterations to summarize")
    kept = flags[burn_in:]
    return float(kept.mean())


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocorrelations rho_0..rho_max_lag via FFT."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1].real / n
    if acov[0] <= 0.0:
        raise ValueError("series is constant; autocorrelation undefined")
    return acov / acov[0]


def iact(series) -> float:
    """Integrated autocorrelation time 1 + 2 sum rho_k.

    The sum is truncated with Geyer's initial positive sequence rule: pair
    sums Gamma_m = rho_{2m} + rho_{2m+1} are accumulated while they stay
    positive, which is parameter-free and standard for MCMC comparisons.
    Floored at 1 so that ESS never exceeds the series length.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 points for a stable IACT estimate")
    rho = autocorrelation(x, max_lag=x.size - 1)
    total = 0.0
    m = 0
    while 2 * m + 1 < rho.size:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
        m += 1
    # 2 * sum of paired correlations counts rho_0 twice
    return max(2.0 * total - 1.0, 1.0)


def ess(series) -> float:
    """Effective sample size len(series) / IACT (so ESS * IACT = n exactly)."""
    x = np.asarray(series, dtype=float)
    return x.size / iact(x)


@dataclass(frozen=True)
class ChainSummary:
    acceptance: float
    iact: dict
    ess: dict
    mean: dict
    variance: dict
    burn_in: int
    iterations: int

    @property
    def ess_min(self) -> float:
        return min(self.ess.values())

    def as_dict(self) -> dict:
        return {
            "acceptance": self.acceptance,
            "iact": dict(self.iact),
            "ess": dict(self.ess),
            "mean": dict(self.mean),
            "variance": dict(self.variance),
            "burn_in": self.burn_in,
            "iterations": self.iterations,
        }


def summarize_chain(records, burn_in: int) -> ChainSummary:
    """Acceptance plus per-parameter IACT/ESS and posterior moments."""
    if burn_in >= len(records):
        raise ValueError("burn-in leaves no iterations to summarize")
    kept = records[burn_in:]
    acc = acceptance_rate(records, burn_in)
    names = ("rho", "sigma2_x", "sigma2_y")
    iacts, esses, means, variances = {}, {}, {}, {}
    for name in names:
        series = np.array([getattr(r, name) for r in kept], dtype=float)
        means[name] = float(series.mean())
        variances[name] = float(series.var())
        try:
            tau = iact(series)
        except ValueError:
            tau = float("nan")
        iacts[name] = tau
        esses[name] = series.size / tau if np.isfinite(tau) else float("nan")
    return ChainSummary(acc, iacts, esses, means, variances, burn_in, len(records))
