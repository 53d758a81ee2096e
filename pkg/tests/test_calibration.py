import math

import numpy as np
import pytest
from scipy import optimize

from seqks import (FalseAlarmBudget, FixedCounts, PoissonCounts, SpectrumCdf, WindowedKSDetector,
                   calibrate_monte_carlo, false_alarm_bound, power_lower_bound,
                   threshold_for_target, threshold_from_bound, tv_distance)
from seqks.calibration import mean_crossings
from seqks.exceptions import DimensionError, DomainError, UndefinedPowerError
from seqks.simulation import Scenario, gaussian_mixture_density, mix_densities

MIX = [(0.3, -4, 1.2), (0.25, -1, 0.8), (0.25, 2, 1.0), (0.2, 5, 1.5)]


class TestThresholdFromBound:
    def test_worked_example(self):
        c = threshold_from_bound(FalseAlarmBudget(1000, 50, 1.0))
        assert c == pytest.approx(math.sqrt(math.log(100000) / 2), abs=1e-12)
        assert round(c, 1) == 2.4

    def test_already_met_at_zero(self):
        assert threshold_from_bound(FalseAlarmBudget(1, 1, 2.0)) == 0.0

    def test_against_bisection(self):
        c = threshold_from_bound(FalseAlarmBudget(1000, 1, 1.0))
        root = optimize.brentq(lambda x: false_alarm_bound(1000, 1, x) - 1.0, 0, 10, xtol=1e-14)
        assert c == pytest.approx(root, abs=1e-10)
        assert c == pytest.approx(1.9495, abs=1e-4)

    def test_monotone(self):
        base = threshold_from_bound(FalseAlarmBudget(500, 20, 1.0))
        assert threshold_from_bound(FalseAlarmBudget(1000, 20, 1.0)) >= base
        assert threshold_from_bound(FalseAlarmBudget(500, 40, 1.0)) >= base
        assert threshold_from_bound(FalseAlarmBudget(500, 20, 2.0)) <= base

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            FalseAlarmBudget(10, 20)
        with pytest.raises(ValueError):
            FalseAlarmBudget(10, 0)
        with pytest.raises(ValueError):
            FalseAlarmBudget(10, 5, 0.0)


class TestThresholdForTarget:
    def test_minimal_threshold_brute_force(self):
        rng = np.random.default_rng(0)
        paths = rng.gamma(2.0, 1.0, size=(40, 300))
        for strict in (False, True):
            for target in (0.5, 1.0, 3.0):
                c = threshold_for_target(paths, target, strict=strict)
                assert mean_crossings(paths, c, strict) <= target
                # any smaller candidate value breaks the target
                below = paths[paths < c]
                if below.size:
                    assert mean_crossings(paths, below.max(), strict) > target

    def test_infinite_target(self):
        assert threshold_for_target(np.ones((2, 3)), math.inf) == 0.0

    def test_nonpositive_target(self):
        with pytest.raises(DomainError):
            threshold_for_target(np.ones((2, 3)), 0.0)

    def test_skipped_steps_ignored(self):
        paths = np.array([[-np.inf, 1.0, 2.0], [3.0, -np.inf, 0.5]])
        c = threshold_for_target(paths, 1.0)
        assert mean_crossings(paths, c) <= 1.0
        # two crossings allowed in total: 3.0 and 2.0
        assert c == np.nextafter(1.0, np.inf)


@pytest.fixture(scope="module")
def small_null():
    f0 = gaussian_mixture_density(MIX, 64)
    return Scenario(f0, f0, 100.0, 200)


class TestCalibrateMonteCarlo:
    def test_reproducible(self, small_null):
        det = WindowedKSDetector(small_null.pre, window=10, threshold=1.0).fit()
        a = calibrate_monte_carlo(small_null, det, 200, 1.0, 20, seed=3)
        b = calibrate_monte_carlo(small_null, det, 200, 1.0, 20, seed=3)
        assert a == b

    def test_fresh_seed_revalidation(self, small_null):
        from seqks.simulation import null_paths

        det = WindowedKSDetector(small_null.pre, window=10, threshold=1.0).fit()
        c = calibrate_monte_carlo(small_null, det, 200, 2.0, 50, seed=12)
        fresh = null_paths(small_null, {"d": det}, 200, 200, seed=99)["d"]
        assert 1.0 <= mean_crossings(fresh, c) <= 3.0

    def test_not_above_bound(self, small_null):
        det = WindowedKSDetector(small_null.pre, window=10, threshold=1.0).fit()
        c_mc = calibrate_monte_carlo(small_null, det, 200, 1.0, 50, seed=4)
        assert c_mc <= threshold_from_bound(FalseAlarmBudget(200, 10, 1.0))

    def test_rejects_bad_target(self, small_null):
        det = WindowedKSDetector(small_null.pre, window=10, threshold=1.0).fit()
        with pytest.raises(DomainError):
            calibrate_monte_carlo(small_null, det, 200, -1.0, 5, seed=0)


def _random_cdf(rng, D):
    return SpectrumCdf.from_weights(rng.dirichlet(np.ones(D)))


class TestTvDistance:
    def test_identical(self):
        c = SpectrumCdf.from_weights([0.2, 0.3, 0.5])
        assert tv_distance(c, c) == 0.0

    def test_single_bin(self):
        assert tv_distance(SpectrumCdf(np.array([0.5, 1.0])),
                           SpectrumCdf(np.array([0.2, 1.0]))) == pytest.approx(0.3)

    def test_mixture_linearity(self):
        f0 = gaussian_mixture_density(MIX, 128)
        fA = gaussian_mixture_density([(1.0, 1.5, 0.3)], 128)
        for w in (0.1, 0.5, 0.97):
            mixed = mix_densities(f0, fA, w)
            assert tv_distance(mixed.cdf, f0.cdf) == pytest.approx(
                (1 - w) * tv_distance(fA.cdf, f0.cdf), abs=1e-12)

    def test_metric_axioms(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a, b, c = (_random_cdf(rng, 7) for _ in range(3))
            assert tv_distance(a, b) == tv_distance(b, a)
            assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15
            assert tv_distance(a, b) > 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            tv_distance(SpectrumCdf.from_weights([1, 1]), SpectrumCdf.from_weights([1, 1, 1]))


class TestPowerLowerBound:
    def test_tail_vanishes(self):
        d = power_lower_bound(2.0, 0.1, FixedCounts(10_000))
        assert d.required_counts == pytest.approx(1600.0)
        assert d.tail_prob == 0.0
        assert d.prob_bound == pytest.approx(1 - 2 * math.exp(-8.0))

    def test_c_24(self):
        d = power_lower_bound(2.4, 1.0, FixedCounts(10**6))
        assert d.prob_bound == pytest.approx(1 - 2 * math.exp(-11.52), abs=1e-15)
        assert d.prob_bound == pytest.approx(0.99998, abs=1e-5)

    def test_vacuous_bound_is_kept_raw(self):
        d = power_lower_bound(0.1, 1.0, FixedCounts(10**6))
        assert d.prob_bound == pytest.approx(1 - 2 * math.exp(-0.02), abs=1e-15)
        assert d.prob_bound < -0.96
        assert d.reported == 0.0

    def test_poisson_tail_exact(self):
        from scipy import stats

        d = power_lower_bound(2.0, 0.1, PoissonCounts(rate=50.0, steps=30))
        assert d.tail_method == "exact-poisson"
        assert d.tail_prob == pytest.approx(stats.poisson.cdf(1599, 1500.0))

    def test_poisson_tail_normal_approximation(self):
        d = power_lower_bound(2.0, 0.001, PoissonCounts(rate=2e7, steps=1))
        assert d.tail_method == "normal-approx"
        assert 0.0 <= d.tail_prob <= 1.0

    def test_zero_tv(self):
        with pytest.raises(UndefinedPowerError):
            power_lower_bound(2.0, 0.0, FixedCounts(100))
