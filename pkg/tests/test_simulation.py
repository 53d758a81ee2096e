import math

import numpy as np
import pytest
from scipy import integrate, stats

from seqks import WindowedKSDetector
from seqks.exceptions import DimensionError, DomainError
from seqks.simulation import (Density, DelayRecord, Scenario, SourceSpec, anomaly_weight,
                              average_detection_delay, gaussian_mixture_density,
                              generate_stream, make_rng, mix_densities, null_paths,
                              run_scenario, sample_counts, source_rate)

MIX = [(0.3, -4, 1.2), (0.25, -1, 0.8), (0.25, 2, 1.0), (0.2, 5, 1.5)]


class TestDensity:
    def test_sums_to_one(self):
        for D in (2, 17, 512, 2048):
            d = gaussian_mixture_density(MIX, D)
            assert abs(d.weights.sum() - 1.0) <= 1e-12
            assert np.all(d.weights >= 0)

    def test_symmetric_mixture(self):
        d = gaussian_mixture_density([(0.5, -2, 1), (0.5, 2, 1)], 64)
        np.testing.assert_allclose(d.weights, d.weights[::-1], atol=1e-15)

    def test_bins_match_quadrature(self):
        D, lo, hi = 40, -8.0, 8.0
        d = gaussian_mixture_density(MIX, D, (lo, hi))
        edges = np.linspace(lo, hi, D + 1)
        for j in range(D):
            a = -np.inf if j == 0 else edges[j]
            b = np.inf if j == D - 1 else edges[j + 1]
            val, _ = integrate.quad(d.mixture.pdf, a, b, epsabs=1e-14, epsrel=1e-12)
            assert d.weights[j] == pytest.approx(val, abs=1e-8)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            Density(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            Density(np.array([1.5, -0.5]))

    def test_from_counts(self):
        d = Density.from_counts([1, 3])
        np.testing.assert_allclose(d.weights, [0.25, 0.75])

    def test_bin_samples_fold_edges(self):
        d = gaussian_mixture_density(MIX, 4, (0.0, 4.0))
        np.testing.assert_array_equal(d.bin_samples([-10, 0.5, 1.5, 2.5, 3.99, 100]), [2, 1, 1, 2])


class TestMix:
    def setup_method(self):
        self.f0 = gaussian_mixture_density(MIX, 128)
        self.fA = gaussian_mixture_density([(1.0, 1.5, 0.3)], 128)

    def test_limits(self):
        assert mix_densities(self.f0, self.fA, 1.0) is self.f0
        near = mix_densities(self.f0, self.fA, 1e-12)
        np.testing.assert_allclose(near.weights, self.fA.weights, atol=1e-11)

    def test_linear(self):
        w = 0.3
        m = mix_densities(self.f0, self.fA, w)
        np.testing.assert_allclose(m.weights, w * self.f0.weights + (1 - w) * self.fA.weights,
                                   atol=1e-15)
        # the analytic mixture agrees with the binned one
        again = gaussian_mixture_density(m.mixture.components, 128)
        np.testing.assert_allclose(again.weights, m.weights, atol=1e-12)

    def test_domain(self):
        for w in (0.0, -0.1, 1.1):
            with pytest.raises(DomainError):
                mix_densities(self.f0, self.fA, w)
        with pytest.raises(DimensionError):
            mix_densities(self.f0, gaussian_mixture_density(MIX, 64), 0.5)


class TestSource:
    def test_reference_geometry(self):
        assert source_rate(SourceSpec(0.000844, 0.05, 500.0)) == pytest.approx(629.37, abs=0.01)

    def test_far_source(self):
        assert source_rate(SourceSpec(100.0, 150.0, 500.0)) == pytest.approx(1.849, abs=1e-3)

    def test_inverse_square(self):
        near = source_rate(SourceSpec(1.0, 1.0, 1.0))
        far = source_rate(SourceSpec(1.0, 2.0, 1.0))
        assert far / near == pytest.approx(0.25 * math.exp(-0.0100029), rel=1e-12)

    def test_anomaly_weight(self):
        assert anomaly_weight(500.0, 0.0) == 1.0
        assert anomaly_weight(500.0, 500.0) == 0.5
        with pytest.raises(DomainError):
            anomaly_weight(0.0, 1.0)

    def test_bad_distance(self):
        with pytest.raises(DomainError):
            SourceSpec(1.0, 0.0, 1.0)


class TestSampling:
    def test_step_counts(self):
        d = gaussian_mixture_density(MIX, 16)
        rng = make_rng(1)
        X = np.array([sample_counts(d, 200.0, rng).counts for _ in range(4000)])
        totals = X.sum(axis=1)
        # Poisson totals: mean and variance both mu
        assert abs(totals.mean() - 200) < 4 * math.sqrt(200 / 4000)
        assert totals.var() == pytest.approx(200, rel=0.1)
        np.testing.assert_allclose(X.sum(axis=0) / X.sum(), d.weights, atol=3e-3)

    def test_philox_reproducible(self):
        s = Scenario(gaussian_mixture_density(MIX, 8), gaussian_mixture_density(MIX, 8), 30, 20)
        a = generate_stream(s, 42).counts
        b = generate_stream(s, 42).counts
        assert np.array_equal(a, b)
        assert make_rng(0).bit_generator.__class__.__name__ == "Philox"

    def test_raw_means_clt(self):
        f = gaussian_mixture_density(MIX, 64)
        mean = sum(w * m for w, m, _ in MIX)
        var = sum(w * (s * s + m * m) for w, m, s in MIX) - mean ** 2
        s = Scenario(f, f, 100, 2000, mode="raw", fixed_count=True)
        M = generate_stream(s, 3).means
        assert np.all(M[:, 1] == 100)
        z = (M[:, 0] - mean) / math.sqrt(var / 100)
        assert stats.kstest(z, "norm").pvalue > 0.01

    def test_raw_and_binned_agree(self):
        f = gaussian_mixture_density(MIX, 12, (-8, 8))
        raw = generate_stream(Scenario(f, f, 200, 300, mode="raw"), 4).data_for("counts").sum(0)
        binned = generate_stream(Scenario(f, f, 200, 300), 5).counts.sum(0)
        _, p, _, _ = stats.chi2_contingency(np.vstack([raw, binned]))
        assert p > 0.01

    def test_pre_change_segment_independent_of_changepoint(self):
        f0 = gaussian_mixture_density(MIX, 32)
        fA = gaussian_mixture_density([(1.0, 0, 1)], 32)
        base = Scenario(f0, fA, 50, 100)
        a = generate_stream(base.with_changepoint(40), 7)
        b = generate_stream(base.with_changepoint(70), 7)
        assert np.array_equal(a.totals, b.totals)
        # multinomial draws are consumed in the same order, so the shared prefix agrees
        assert np.array_equal(a.counts[:40], b.counts[:40])


class TestRunScenario:
    def test_disjoint_densities_alarm_immediately(self):
        w0 = np.zeros(8); w0[:4] = 0.25
        w1 = np.zeros(8); w1[4:] = 0.25
        s = Scenario(Density(w0), Density(w1), 500, 200, changepoint=100)
        det = WindowedKSDetector(Density(w0).cdf, window=10, threshold=2.4).fit()
        rec = run_scenario(s, {"ks": det}, 1)["ks"]
        assert rec.delay == 1 and rec.first_alarm == 101 and not rec.censored

    def test_deterministic(self):
        f0 = gaussian_mixture_density(MIX, 64)
        fA = mix_densities(f0, gaussian_mixture_density([(1, 0, 0.5)], 64), 0.8)
        s = Scenario(f0, fA, 200, 300, changepoint=150)
        det = WindowedKSDetector(f0.cdf, window=20, threshold=2.0).fit()
        assert run_scenario(s, {"ks": det}, 11) == run_scenario(s, {"ks": det}, 11)

    def test_null_paths_shape(self):
        f0 = gaussian_mixture_density(MIX, 32)
        det = WindowedKSDetector(f0.cdf, window=5, threshold=2.0).fit()
        P = null_paths(Scenario(f0, f0, 30, 10), {"ks": det}, 25, 6, seed=0)["ks"]
        assert P.shape == (6, 25)
        assert np.array_equal(P, null_paths(Scenario(f0, f0, 30, 10), {"ks": det}, 25, 6, 0)["ks"])


class TestDelaySummary:
    def _records(self):
        return [DelayRecord("a", 100, 700, 110, 10.0, False, 0),
                DelayRecord("a", 200, 700, 230, 30.0, False, 1),
                DelayRecord("a", 600, 700, None, 100.0, True, 2)]

    def test_horizon_policy(self):
        s = average_detection_delay(self._records())
        assert s.mean_delay == pytest.approx(140 / 3)
        assert s.detection_fraction == pytest.approx(2 / 3)
        assert s.n_censored == 1
        assert s.mean_false_alarms == 1.0
        assert s.false_alarm_rate == pytest.approx(3 / 900)

    def test_exclude_policy(self):
        s = average_detection_delay(self._records(), policy="exclude")
        assert s.mean_delay == 20.0

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            average_detection_delay(self._records(), policy="drop")
