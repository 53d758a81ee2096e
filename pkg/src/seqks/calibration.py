"""Alarm thresholds and power diagnostics.

Two routes to a threshold:

* :func:`threshold_from_bound` inverts the analytic false-alarm bound
  ``E(A_T) <= 2 T L exp(-2 c^2)``. It needs nothing but ``T``, ``L`` and the
  tolerated number of false alarms, and is conservative.
* :func:`calibrate_monte_carlo` simulates null streams and picks the
  smallest threshold whose mean number of crossings per stream meets the
  target. Every detector can be calibrated this way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import DimensionError, DomainError, UndefinedPowerError
from .ks_core import SpectrumCdf

# Poisson CDFs with a larger mean fall back to the normal approximation
EXACT_POISSON_MAX_MEAN = 1e7


@dataclass(frozen=True)
class FalseAlarmBudget:
    """Tolerate ``alpha`` expected false alarms over ``horizon`` steps with window ``window``."""

    horizon: int
    window: int
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be a positive integer, got {self.window!r}")
        if int(self.horizon) != self.horizon or self.horizon < self.window:
            raise ValueError(f"horizon must be an integer >= window, got {self.horizon!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")


def threshold_from_bound(budget: FalseAlarmBudget) -> float:
    """Smallest ``c >= 0`` with ``2 T L exp(-2 c^2) <= alpha``."""
    if math.isinf(budget.alpha):
        return 0.0
    ratio = 2.0 * budget.horizon * budget.window / budget.alpha
    return math.sqrt(max(0.0, math.log(ratio)) / 2.0)


def false_alarm_bound(horizon: int, window: int, threshold: float) -> float:
    """Upper bound on the expected number of false alarms over ``horizon`` steps."""
    return 2.0 * horizon * window * math.exp(-2.0 * threshold * threshold)


def threshold_for_target(paths, target: float, strict: bool = False) -> float:
    """Smallest threshold whose mean crossings per stream is at most ``target``.

    ``paths`` is a (reps, T) array of per-step statistics; entries equal to
    ``-inf`` never cross. With ``strict`` a crossing is ``stat > c``,
    otherwise ``stat >= c``. One sort of the pooled values, no re-simulation.
    """
    if not target > 0:
        raise DomainError(f"target must be > 0, got {target!r}")
    paths = np.atleast_2d(np.asarray(paths, dtype=np.float64))
    reps = paths.shape[0]
    values = paths[np.isfinite(paths)]
    if math.isinf(target):
        return 0.0
    allowed = int(math.floor(target * reps + 1e-9))
    if allowed >= values.size:
        return 0.0 if values.size == 0 or values.min() >= 0 else float(values.min())
    # (allowed+1)-th largest value must not cross
    kth = np.partition(values, values.size - allowed - 1)[values.size - allowed - 1]
    return float(kth) if strict else float(np.nextafter(kth, np.inf))


def mean_crossings(paths, threshold: float, strict: bool = False) -> float:
    paths = np.atleast_2d(np.asarray(paths, dtype=np.float64))
    hits = paths > threshold if strict else paths >= threshold
    return float(hits.sum(axis=1).mean())


def calibrate_monte_carlo(null_gen, detector, horizon: int, target: float, reps: int,
                          seed, n_jobs: int = 1) -> float:
    """Monte-Carlo threshold for ``detector`` on null streams drawn from ``null_gen``.

    ``null_gen`` is a :class:`~seqks.simulation.Scenario` without a changepoint
    in ``[1, horizon]``; ``detector`` is a fitted detector whose threshold is
    ignored. Crossings are counted at every step without resetting, so the
    target is an expected number of false alarms per stream.
    """
    from .simulation import null_paths

    if not target > 0:
        raise DomainError(f"target must be > 0, got {target!r}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    paths = null_paths(null_gen, {"d": detector}, horizon, reps, seed, n_jobs=n_jobs)["d"]
    return threshold_for_target(paths, target, strict=detector.strict_alarm)


def tv_distance(cdf0: SpectrumCdf, cdfc: SpectrumCdf) -> float:
    """Largest CDF gap over the bin right endpoints."""
    a = cdf0.values if isinstance(cdf0, SpectrumCdf) else np.asarray(cdf0, float)
    b = cdfc.values if isinstance(cdfc, SpectrumCdf) else np.asarray(cdfc, float)
    if a.shape != b.shape:
        raise DimensionError(f"bin count mismatch: {a.size} != {b.size}")
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True)
class FixedCounts:
    """Deterministic total count over the post-change window."""

    total: int


@dataclass(frozen=True)
class PoissonCounts:
    """Total count over ``steps`` steps of Poisson arrivals with mean ``rate`` per step."""

    rate: float
    steps: int = 1

    @property
    def mean(self) -> float:
        return self.rate * self.steps


@dataclass(frozen=True)
class PowerDiagnostics:
    tv: float
    c_L: float
    required_counts: float
    prob_bound: float  # raw value; may be negative (vacuous)
    tail_prob: float
    tail_method: str

    @property
    def reported(self) -> float:
        return min(1.0, max(0.0, self.prob_bound))


def _count_tail(counts_dist, limit: float) -> tuple[float, str]:
    """P(total < limit) and the method used to compute it."""
    if isinstance(counts_dist, (int, np.integer)):
        counts_dist = FixedCounts(int(counts_dist))
    if isinstance(counts_dist, FixedCounts):
        return (1.0 if counts_dist.total < limit else 0.0), "deterministic"
    if isinstance(counts_dist, PoissonCounts):
        lam = counts_dist.mean
        k = math.ceil(limit) - 1  # largest integer strictly below limit
        if k < 0:
            return 0.0, "exact-poisson"
        if lam <= EXACT_POISSON_MAX_MEAN:
            return float(stats.poisson.cdf(k, lam)), "exact-poisson"
        return float(stats.norm.cdf((k + 0.5 - lam) / math.sqrt(lam))), "normal-approx"
    raise TypeError(f"unsupported counts distribution {counts_dist!r}")


def power_lower_bound(c_L: float, tv: float, counts_dist) -> PowerDiagnostics:
    """Lower bound on detecting the change within the window covered by ``counts_dist``.

    ``1 - 2 exp(-2 c^2) - P(sqrt(total) < 2 c / tv)``.
    """
    if not tv > 0:
        raise UndefinedPowerError("tv distance is zero; the change is undetectable")
    if not c_L > 0:
        raise DomainError(f"c_L must be > 0, got {c_L!r}")
    required = (2.0 * c_L / tv) ** 2
    tail, method = _count_tail(counts_dist, required)
    prob = 1.0 - 2.0 * math.exp(-2.0 * c_L * c_L) - tail
    return PowerDiagnostics(tv=float(tv), c_L=float(c_L), required_counts=required,
                            prob_bound=prob, tail_prob=tail, tail_method=method)
