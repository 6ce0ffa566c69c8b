"""Brute-force cross-checks for the buffer-sizing analytics.

The Monte-Carlo path here never touches the closed-form variance: it runs
the raw per-slot recursion (level = level - arrivals + deliveries, with
deliveries the delay-pmf-weighted mix of past sends) under the reactive
policy and measures the spread of the level change between well-separated
slots directly.  Agreement with :func:`qkdbuffer.analytics.buffer_change_std`
therefore exercises the whole window-sum derivation, not just the final
formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .analytics import AutocovarianceSeries
from .core import DelayDistribution


@dataclass(frozen=True)
class PoissonProcess:
    """Independent Poisson request counts per slot."""

    rate_per_slot: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.poisson(self.rate_per_slot, size=n).astype(float)

    def true_cov(self, max_lag: int) -> AutocovarianceSeries:
        cov = np.zeros(max_lag)
        cov[0] = self.rate_per_slot
        return AutocovarianceSeries(cov=cov, mean=self.rate_per_slot, sample_count=1)


@dataclass(frozen=True)
class Ar1Process:
    """Gaussian AR(1) request levels: autocovariance std^2 * rho^|lag|."""

    mean: float
    std: float
    rho: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        burn = 200
        noise = rng.standard_normal(n + burn) * self.std * np.sqrt(1 - self.rho**2)
        series = lfilter([1.0], [1.0, -self.rho], noise)
        return self.mean + series[burn:]

    def true_cov(self, max_lag: int) -> AutocovarianceSeries:
        cov = self.std**2 * self.rho ** np.arange(max_lag)
        return AutocovarianceSeries(cov=cov, mean=self.mean, sample_count=1)


@dataclass(frozen=True)
class Ma2Process:
    """Order-2 moving average of Gaussian noise; correlation dies at lag 3."""

    mean: float
    noise_std: float
    theta1: float
    theta2: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        noise = rng.standard_normal(n + 2) * self.noise_std
        return (
            self.mean
            + noise[2:]
            + self.theta1 * noise[1:-1]
            + self.theta2 * noise[:-2]
        )

    def true_cov(self, max_lag: int) -> AutocovarianceSeries:
        s2 = self.noise_std**2
        t1, t2 = self.theta1, self.theta2
        full = [
            s2 * (1 + t1**2 + t2**2),
            s2 * (t1 + t1 * t2),
            s2 * t2,
        ]
        cov = np.zeros(max_lag)
        for lag in range(min(3, max_lag)):
            cov[lag] = full[lag]
        return AutocovarianceSeries(cov=cov, mean=self.mean, sample_count=1)


def mc_buffer_change_std(
    process,
    delays: DelayDistribution,
    rng: np.random.Generator,
    window_gap: int | None = None,
    trials: int = 100_000,
) -> tuple[float, float]:
    """Sample mean and std of the buffer-level change over distant slots.

    Simulates the level recursion under the reactive policy on one long
    trajectory and differences it at points ``window_gap`` apart.  The gap
    defaults to 50 K and must dwarf K so the two endpoints share no recent
    request history.  Returns ``(mean, std)`` of the sampled changes.
    """
    k = delays.k
    if window_gap is None:
        window_gap = 50 * k
    if window_gap < 10 * k:
        raise ValueError("window_gap must be much larger than the delay support")
    if trials < 100_000:
        raise ValueError("need at least 1e5 trials for a stable estimate")

    # Successive sample points are spaced widely enough that their request
    # windows (and any residual process correlation) do not overlap.
    stride = 4 * k + 25
    length = stride * trials + window_gap + k + 1
    n = process.sample(rng, length)

    # Raw recursion: deliveries in slot i mix the sends of slots i-1..i-K
    # by the delay pmf; under the reactive policy sends equal arrivals.
    # The leading zero realizes the minimum one-slot delay.
    delivered = np.concatenate(([0.0], np.convolve(n, delays.omega)))[:length]
    level = np.cumsum(delivered - n)

    start = k  # skip slots whose deliveries reference the empty pre-history
    x = start + stride * np.arange(trials)
    change = level[x + window_gap] - level[x]
    return float(change.mean()), float(change.std())
