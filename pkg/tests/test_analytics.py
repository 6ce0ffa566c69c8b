import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdbuffer.analytics import (
    AutocovarianceSeries,
    NormalFit,
    OpCounter,
    buffer_change_std,
    estimate_autocovariance,
    fit_normal,
    inverse_normal_cdf,
    normal_cdf,
    required_buffer,
    sizing_from_std,
    window_cov_direct,
    window_cov_table,
)
from qkdbuffer.core import DelayDistribution
from qkdbuffer.errors import (
    DegenerateDistribution,
    InsufficientSamples,
    InvalidEpsilon,
    LagRangeExceeded,
)


def iid_series(variance: float, mean: float, max_lag: int) -> AutocovarianceSeries:
    cov = np.zeros(max_lag)
    cov[0] = variance
    return AutocovarianceSeries(cov=cov, mean=mean, sample_count=10_000)


class TestEstimateAutocovariance:
    def test_constant_series_has_zero_covariance(self):
        est = estimate_autocovariance([5, 5, 5, 5], max_lag=2)
        assert est.mean == 5
        np.testing.assert_allclose(est.cov, [0.0, 0.0], atol=1e-12)

    def test_alternating_series_exact(self):
        est = estimate_autocovariance([0, 10] * 50, max_lag=2)
        assert est.mean == 5
        # centered values are +/-5; lag-1 products are all -25 but the 1/N
        # normalization shades the 99-term sum: -25 * 99 / 100
        assert est.cov[0] == pytest.approx(25.0)
        assert est.cov[1] == pytest.approx(-25.0 * 99 / 100)

    def test_iid_poisson_matches_theory(self):
        rng = np.random.default_rng(42)
        samples = rng.poisson(5.0, size=1_000_000)
        est = estimate_autocovariance(samples, max_lag=4)
        assert est.cov[0] == pytest.approx(5.0, rel=0.02)
        assert np.all(np.abs(est.cov[1:]) < 0.05)
        assert est.mean == pytest.approx(5.0, rel=0.02)

    def test_requires_two_samples_per_lag(self):
        with pytest.raises(InsufficientSamples):
            estimate_autocovariance([1, 2, 3], max_lag=2)

    def test_series_invariants_validated(self):
        with pytest.raises(ValueError):
            AutocovarianceSeries(cov=np.array([1.0, 2.0]), mean=0.0, sample_count=10)
        with pytest.raises(ValueError):
            AutocovarianceSeries(cov=np.array([-1.0]), mean=0.0, sample_count=10)


class TestWindowCovTable:
    def test_iid_gives_min_of_window_lengths(self):
        series = iid_series(variance=3.0, mean=2.0, max_lag=5)
        table = window_cov_table(series, 5)
        j, k = np.indices((5, 5)) + 1
        np.testing.assert_allclose(table, 3.0 * np.minimum(j, k))

    def test_alternating_two_by_two_by_hand(self):
        series = AutocovarianceSeries(
            cov=np.array([25.0, -25.0]), mean=5.0, sample_count=100
        )
        table = window_cov_table(series, 2)
        np.testing.assert_allclose(table, [[25.0, 0.0], [0.0, 0.0]])

    def test_matches_direct_double_sum(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            k = int(rng.integers(1, 7))
            c0 = float(rng.uniform(0.5, 10))
            cov = np.concatenate(([c0], rng.uniform(-c0, c0, size=k - 1)))
            series = AutocovarianceSeries(cov=cov, mean=1.0, sample_count=100)
            table = window_cov_table(series, k)
            for j in range(1, k + 1):
                for q in range(1, k + 1):
                    direct = window_cov_direct(series, j, q)
                    assert table[j - 1, q - 1] == pytest.approx(
                        direct, rel=1e-9, abs=1e-9
                    )

    def test_table_is_symmetric(self):
        rng = np.random.default_rng(5)
        cov = np.concatenate(([4.0], rng.uniform(-4, 4, size=5)))
        series = AutocovarianceSeries(cov=cov, mean=0.0, sample_count=50)
        table = window_cov_table(series, 6)
        np.testing.assert_allclose(table, table.T)
        assert table[0, 0] == pytest.approx(cov[0])

    def test_short_series_rejected(self):
        series = iid_series(1.0, 0.0, max_lag=3)
        with pytest.raises(LagRangeExceeded):
            window_cov_table(series, 4)

    def test_op_count_is_quadratic(self):
        series = iid_series(1.0, 0.0, max_lag=12)
        ops = OpCounter()
        window_cov_table(series, 12, ops=ops)
        assert ops.count == 12 * 12


class TestBufferChangeStd:
    def test_iid_deterministic_delay_closed_form(self):
        # independent requests with variance v and a fixed d-slot delay give
        # change variance 2 * d * v
        for d in (1, 2, 5):
            series = iid_series(variance=5.0, mean=5.0, max_lag=d)
            omega = np.zeros(d)
            omega[-1] = 1.0
            sigma = buffer_change_std(series, DelayDistribution(omega))
            assert sigma == pytest.approx(math.sqrt(2 * d * 5.0), rel=1e-9)

    def test_unit_delay_support_reduces_to_lag_zero(self):
        series = AutocovarianceSeries(
            cov=np.array([7.3]), mean=2.0, sample_count=1000
        )
        sigma = buffer_change_std(series, DelayDistribution(np.array([1.0])))
        assert sigma == pytest.approx(math.sqrt(2 * 7.3), rel=1e-9)

    def test_iid_general_delays_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            k = int(rng.integers(1, 7))
            raw = rng.uniform(0.05, 1.0, size=k)
            omega = raw / raw.sum()
            v = float(rng.uniform(0.5, 8.0))
            series = iid_series(variance=v, mean=1.0, max_lag=k)
            j, q = np.indices((k, k)) + 1
            expected = math.sqrt(2 * v * float(omega @ np.minimum(j, q) @ omega))
            sigma = buffer_change_std(series, DelayDistribution(omega))
            assert sigma == pytest.approx(expected, rel=1e-9)

    def test_negative_variance_clamped_to_zero(self):
        # lag-1 anticorrelation strong enough to cancel everything
        series = AutocovarianceSeries(
            cov=np.array([1.0, -1.0]), mean=0.0, sample_count=100
        )
        omega = np.array([0.5, 0.5])
        sigma = buffer_change_std(series, DelayDistribution(omega))
        assert sigma >= 0.0

    def test_quadratic_form_invariant_under_transpose(self):
        rng = np.random.default_rng(11)
        cov = np.concatenate(([3.0], rng.uniform(-3, 3, size=4)))
        series = AutocovarianceSeries(cov=cov, mean=0.0, sample_count=64)
        table = window_cov_table(series, 5)
        raw = rng.uniform(0.1, 1.0, 5)
        omega = raw / raw.sum()
        assert float(omega @ table @ omega) == pytest.approx(
            float(omega @ table.T @ omega), rel=1e-12
        )


class TestRequiredBuffer:
    def test_quantile_window_from_bisection_oracle(self):
        # independent root-find of CDF(-z) = eps on the erf-based CDF
        eps = 1e-6
        lo, hi = 0.0, 10.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if normal_cdf(-mid) > eps:
                lo = mid
            else:
                hi = mid
        z_oracle = (lo + hi) / 2
        assert 4.7525 <= z_oracle <= 4.7545
        value = required_buffer(1.0, 1e-6)
        assert value == pytest.approx(z_oracle, abs=1e-6)
        assert 4.7525 <= value <= 4.7545

    def test_zero_sigma_degenerates_to_zero(self):
        assert required_buffer(0.0, 0.01) == 0.0

    def test_epsilon_boundary_rejected(self):
        with pytest.raises(InvalidEpsilon):
            required_buffer(2.0, 0.5)
        with pytest.raises(InvalidEpsilon):
            required_buffer(2.0, 0.0)

    @given(
        st.floats(0.01, 50.0),
        st.floats(1e-9, 0.49),
        st.floats(1e-9, 0.49),
    )
    @settings(max_examples=150, deadline=None)
    def test_monotonicity(self, sigma, eps_a, eps_b):
        lo_eps, hi_eps = sorted((eps_a, eps_b))
        # nonincreasing in epsilon
        assert required_buffer(sigma, lo_eps) >= required_buffer(sigma, hi_eps)
        # nondecreasing in sigma
        assert required_buffer(sigma * 2, lo_eps) >= required_buffer(sigma, lo_eps)

    def test_inverse_cdf_roundtrip_accuracy(self):
        for p in (1e-9, 1e-6, 0.02, 0.3, 0.5, 0.8, 0.975, 1 - 1e-7):
            z = inverse_normal_cdf(p)
            assert normal_cdf(z) == pytest.approx(p, rel=1e-6, abs=1e-12)


class TestSizing:
    def test_target_floor_is_one_block(self):
        result = sizing_from_std(0.0)
        assert result.target_level == 1
        assert result.reprobe_threshold == 0

    def test_five_sigma_rounding(self):
        result = sizing_from_std(4.4721)
        assert result.target_level == 22
        assert result.reprobe_threshold == 4
        assert result.target_level >= result.reprobe_threshold
        assert 0 < result.epsilon < 0.5


class TestFitNormal:
    def test_recovers_seeded_gaussian(self):
        rng = np.random.default_rng(2024)
        samples = rng.normal(50.0, 7.0, size=100_000)
        fit = fit_normal(samples, bin_count=60)
        assert abs(fit.sigma - 7.0) / 7.0 <= 0.05
        assert fit.r_squared >= 0.98
        assert fit.mu == pytest.approx(50.0, abs=0.2)

    def test_constant_samples_rejected(self):
        with pytest.raises(DegenerateDistribution):
            fit_normal([3.0] * 500, bin_count=10)

    def test_too_few_samples_rejected(self):
        with pytest.raises(InsufficientSamples):
            fit_normal([1.0, 2.0], bin_count=4)

    def test_fit_invariants(self):
        with pytest.raises(ValueError):
            NormalFit(mu=0.0, sigma=-1.0, r_squared=0.5, chi2_reduced=1.0)
        with pytest.raises(ValueError):
            NormalFit(mu=0.0, sigma=1.0, r_squared=1.5, chi2_reduced=1.0)
