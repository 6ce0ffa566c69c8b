"""Buffer-sizing mathematics for rate-matched key relaying.

Under the reactive policy (relay exactly as many blocks as requests arrive
each slot) the buffer level drifts only through short-term fluctuation.
For a weakly stationary request process with autocovariance ``C`` and a
relay-delay pmf ``omega`` over 1..K slots, the level change between two
well-separated slots has variance

    var = 2 * sum_{j,k} omega[j] * omega[k] * W(j, k),

where ``W(j, k) = sum_{p=1..j} sum_{q=1..k} C(p - q)`` is the covariance
between trailing request-window sums of lengths j and k.  ``W`` admits a
2-d prefix recurrence, so the whole computation is O(K^2).  Treating the
change as normal with that variance turns a lagged-supply tolerance
``epsilon`` into a required buffer level via the normal quantile.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import DelayDistribution, round_half_up
from .errors import (
    DegenerateDistribution,
    InsufficientSamples,
    InvalidEpsilon,
    LagRangeExceeded,
)

logger = logging.getLogger(__name__)


class OpCounter:
    """Counts elementary multiply-accumulate work for complexity checks."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class AutocovarianceSeries:
    """Estimated autocovariance C(0..max_lag-1) of a per-slot count series."""

    cov: np.ndarray
    mean: float
    sample_count: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "cov", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("cov must hold at least lag 0")
        if arr[0] < -1e-12:
            raise ValueError("C(0) must be non-negative")
        if np.any(np.abs(arr) > arr[0] + 1e-9 * max(1.0, arr[0])):
            raise ValueError("|C(x)| cannot exceed C(0)")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")

    @property
    def max_lag(self) -> int:
        return int(self.cov.size)

    def at(self, lag: int) -> float:
        """C at a signed lag; stationarity makes the function even."""
        x = abs(int(lag))
        if x >= self.cov.size:
            raise LagRangeExceeded(
                f"lag {x} outside estimated range 0..{self.cov.size - 1}"
            )
        return float(self.cov[x])


def estimate_autocovariance(
    samples, max_lag: int, ops: OpCounter | None = None
) -> AutocovarianceSeries:
    """Biased (1/N) autocovariance estimate at lags 0..max_lag-1.

    The 1/N normalization keeps the estimated sequence well behaved in
    aggregate and shrinks the noisy large-lag terms, at the price of a
    small downward bias.  Requires at least ``2 * max_lag`` samples.
    """
    data = np.asarray(samples, dtype=float)
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    n = data.size
    if n < 2 * max_lag:
        raise InsufficientSamples(
            f"need at least {2 * max_lag} samples for max_lag={max_lag}, got {n}"
        )
    mean = float(data.mean())
    centered = data - mean
    cov = np.empty(max_lag, dtype=float)
    for lag in range(max_lag):
        cov[lag] = np.dot(centered[: n - lag], centered[lag:]) / n
        if ops is not None:
            ops.add(n - lag)
    if ops is not None:
        ops.add(n)  # mean pass
    return AutocovarianceSeries(cov=cov, mean=mean, sample_count=n)


def window_cov_table(
    series: AutocovarianceSeries, k: int, ops: OpCounter | None = None
) -> np.ndarray:
    """K x K table of covariances between trailing window sums.

    Entry (j, k) equals the double sum of C(p - q) over p <= j, q <= k,
    built with the 2-d prefix recurrence

        W[j, k] = W[j-1, k] + W[j, k-1] - W[j-1, k-1] + C(j - k)

    in O(K^2) total.  The table is symmetric and W[1, 1] = C(0).
    """
    if k < 1:
        raise ValueError("k must be positive")
    if series.max_lag < k:
        raise LagRangeExceeded(
            f"need lags 0..{k - 1}, series has 0..{series.max_lag - 1}"
        )
    cov = series.cov
    table = np.zeros((k + 1, k + 1), dtype=float)
    for j in range(1, k + 1):
        for q in range(1, k + 1):
            table[j, q] = (
                table[j - 1, q]
                + table[j, q - 1]
                - table[j - 1, q - 1]
                + cov[abs(j - q)]
            )
    if ops is not None:
        ops.add(k * k)
    return table[1:, 1:]


def window_cov_direct(series: AutocovarianceSeries, j: int, k: int) -> float:
    """Literal O(j*k) double sum; the reference the table is checked against."""
    total = 0.0
    for p in range(1, j + 1):
        for q in range(1, k + 1):
            total += series.at(p - q)
    return total


def buffer_change_std(
    series: AutocovarianceSeries,
    delays: DelayDistribution,
    ops: OpCounter | None = None,
) -> float:
    """Standard deviation of the long-horizon buffer-level change.

    Tiny negative variances produced by estimation noise are clamped to
    zero and logged.
    """
    table = window_cov_table(series, delays.k, ops=ops)
    omega = delays.omega
    variance = 2.0 * float(omega @ table @ omega)
    if ops is not None:
        ops.add(delays.k * delays.k)
    if variance < 0:
        logger.warning(
            "clamping negative variance %.3g from noisy estimates to 0", variance
        )
        variance = 0.0
    return math.sqrt(variance)


# --- normal distribution helpers -------------------------------------------

_SQRT2 = math.sqrt(2.0)

# Rational approximation of the standard normal quantile (Acklam's
# coefficients); absolute error below 4.5e-4 before refinement, far below
# after the Newton step against the erf-based CDF.
_ICDF_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ICDF_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_ICDF_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ICDF_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile.

    Rational approximation in three regimes, then one Newton step against
    :func:`normal_cdf` to polish the result.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(
            ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    # One Newton step: x -= (CDF(x) - p) / pdf(x).
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        x -= (normal_cdf(x) - p) / pdf
    return x


def required_buffer(sigma: float, epsilon: float) -> float:
    """Buffer level whose lagged-supply probability is at most ``epsilon``.

    Solves CDF(-L / sigma) = epsilon for L, i.e. L = sigma * z with z the
    (1 - epsilon) normal quantile.
    """
    if not 0.0 < epsilon < 0.5:
        raise InvalidEpsilon(f"epsilon must lie in (0, 0.5), got {epsilon}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0:
        return 0.0
    return sigma * inverse_normal_cdf(1.0 - epsilon)


@dataclass(frozen=True)
class SizingResult:
    """Buffer levels derived from an estimated change std.

    ``target_level`` is where the controller steers the buffer mean;
    ``reprobe_threshold`` is the conservative floor below which the
    estimate is considered stale.  ``epsilon`` is the achieved
    lagged-supply probability at the target.
    """

    change_std: float
    target_level: int
    reprobe_threshold: int
    epsilon: float

    def __post_init__(self) -> None:
        if self.change_std < 0:
            raise ValueError("change_std must be non-negative")
        if self.target_level < self.reprobe_threshold:
            raise ValueError("target_level must be at least reprobe_threshold")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")


def sizing_from_std(sigma: float, target_multiple: float = 5.0) -> SizingResult:
    """Turn a change std into integer buffer levels.

    The target is ``target_multiple * sigma`` rounded half-up with a floor
    of one block (buffers are whole blocks and a zero target would be
    meaningless even for zero-variance traffic).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    target = max(1, round_half_up(target_multiple * sigma))
    threshold = round_half_up(sigma)
    achieved = normal_cdf(-target / sigma) if sigma > 0 else 0.0
    return SizingResult(
        change_std=sigma,
        target_level=target,
        reprobe_threshold=min(threshold, target),
        epsilon=max(achieved, 1e-300),
    )


@dataclass(frozen=True)
class NormalFit:
    """Goodness of a normal description of a sample."""

    mu: float
    sigma: float
    r_squared: float
    chi2_reduced: float

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.r_squared > 1 + 1e-12:
            raise ValueError("r_squared cannot exceed 1")


def fit_normal(samples, bin_count: int) -> NormalFit:
    """Moment-fit a normal and score it against a histogram.

    ``mu`` and ``sigma`` come from sample moments.  The sample is binned
    into ``bin_count`` equal-width bins and compared with the normal mass
    in each bin: r_squared is 1 - SS_res/SS_tot over bin frequencies, and
    the reduced chi-square uses only bins with expected count >= 5 with
    three fitted-parameter degrees of freedom removed.
    """
    data = np.asarray(samples, dtype=float)
    if data.size < 100:
        raise InsufficientSamples(f"need at least 100 samples, got {data.size}")
    if bin_count < 1:
        raise ValueError("bin_count must be positive")
    mu = float(data.mean())
    sigma = float(data.std())
    if sigma == 0.0:
        raise DegenerateDistribution("constant samples cannot be fit")
    observed, edges = np.histogram(data, bins=bin_count)
    z = (edges - mu) / sigma
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / _SQRT2))
    expected = data.size * np.diff(cdf)
    residual = observed - expected
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((observed - observed.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    usable = expected >= 5.0
    dof = int(usable.sum()) - 3
    if dof > 0:
        chi2 = float(np.sum(residual[usable] ** 2 / expected[usable])) / dof
    else:
        chi2 = float("nan")
    return NormalFit(mu=mu, sigma=sigma, r_squared=r_squared, chi2_reduced=chi2)
