"""Synthetic count streams and the scenario runner.

Per time step ``N_t ~ Poisson(mu)`` photons arrive; their energies are drawn
from the pre-change density up to and including the changepoint ``v`` and
from the post-change density afterwards. Binned streams draw the channel
counts as ``Multinomial(N_t, weights)``; raw streams draw the energies from
an analytic Gaussian mixture.

Random numbers come from :class:`numpy.random.Philox` generators seeded from
a :class:`numpy.random.SeedSequence`; every replicate gets its own spawned
substream, so results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import DimensionError, DomainError
from .ks_core import CountVector, SpectrumCdf

__all__ = [
    "GaussianMixture",
    "Density",
    "Scenario",
    "SourceSpec",
    "Stream",
    "DelayRecord",
    "DelaySummary",
    "make_rng",
    "sample_counts",
    "generate_stream",
    "mix_densities",
    "source_rate",
    "anomaly_weight",
    "gaussian_mixture_density",
    "run_scenario",
    "null_paths",
    "average_detection_delay",
]

_SUM_ATOL = 1e-12


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator from an int, SeedSequence or existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of normals given as ``(weight, mean, sd)`` triples."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        w = np.array([c[0] for c in comps])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"component weights must be >= 0 and sum to 1, got {w.sum()!r}")
        if any(c[2] <= 0 for c in comps):
            raise ValueError("component sds must be > 0")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self):
        return np.array([c[0] for c in self.components])

    def cdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(y)
        for w, m, s in self.components:
            out += w * stats.norm.cdf(y, m, s)
        return out

    def pdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(y)
        for w, m, s in self.components:
            out += w * stats.norm.pdf(y, m, s)
        return out

    def sample(self, n: int, rng) -> np.ndarray:
        rng = make_rng(rng)
        k = rng.multinomial(n, self.weights)
        parts = [rng.normal(m, s, size=c) for (_, m, s), c in zip(self.components, k)]
        y = np.concatenate(parts) if parts else np.zeros(0)
        rng.shuffle(y)
        return y

    def scaled(self, factor: float) -> list:
        return [(w * factor, m, s) for w, m, s in self.components]


@dataclass(frozen=True)
class Density:
    """Per-bin probabilities, optionally backed by an analytic mixture on ``support``."""

    weights: np.ndarray
    mixture: GaussianMixture | None = None
    support: tuple | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > _SUM_ATOL:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if self.support is not None:
            lo, hi = map(float, self.support)
            if not hi > lo:
                raise ValueError("support must satisfy lo < hi")
            object.__setattr__(self, "support", (lo, hi))

    @classmethod
    def from_counts(cls, counts) -> "Density":
        c = np.asarray(counts, dtype=np.float64)
        return cls(_normalize(c))

    @property
    def bin_count(self) -> int:
        return int(self.weights.size)

    @property
    def cdf(self) -> SpectrumCdf:
        return SpectrumCdf.from_weights(self.weights)

    def bin_samples(self, y) -> np.ndarray:
        """Histogram of raw values over ``support``; values outside fold into the edge bins."""
        if self.support is None:
            raise ValueError("density has no support to bin raw samples on")
        lo, hi = self.support
        D = self.bin_count
        idx = np.floor((np.asarray(y, dtype=np.float64) - lo) / (hi - lo) * D)
        idx = np.clip(idx, 0, D - 1).astype(np.int64)
        return np.bincount(idx, minlength=D).astype(np.int64)


def _normalize(w: np.ndarray) -> np.ndarray:
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have a positive total")
    w = w / total
    # push the rounding residue into the largest bin
    w[np.argmax(w)] += 1.0 - w.sum()
    return np.maximum(w, 0.0)


def gaussian_mixture_density(components, n_bins: int, support=(-8.0, 8.0)) -> Density:
    """Bin a Gaussian mixture into ``n_bins`` equal-width channels over ``support``.

    Mass below/above the support is folded into the first/last channel.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    mix = GaussianMixture(tuple(components))
    lo, hi = map(float, support)
    edges = lo + (hi - lo) * np.arange(1, n_bins) / n_bins
    cdf = np.concatenate([[0.0], mix.cdf(edges), [1.0]])
    w = np.diff(cdf)
    return Density(_normalize(np.maximum(w, 0.0)), mix, (lo, hi))


def mix_densities(f0: Density, fA: Density, w: float) -> Density:
    """``w f0 + (1 - w) fA``; ``w = 1`` returns ``f0`` unchanged."""
    if f0.bin_count != fA.bin_count:
        raise DimensionError(f"bin count mismatch: {f0.bin_count} != {fA.bin_count}")
    if not 0.0 < w <= 1.0:
        raise DomainError(f"mixing weight must lie in (0, 1], got {w!r}")
    if w == 1.0:
        return f0
    weights = _normalize(w * f0.weights + (1.0 - w) * fA.weights)
    mixture = None
    if f0.mixture is not None and fA.mixture is not None and f0.support == fA.support:
        mixture = GaussianMixture(tuple(f0.mixture.scaled(w) + fA.mixture.scaled(1.0 - w)))
    return Density(weights, mixture, f0.support if mixture is not None else None)


@dataclass(frozen=True)
class SourceSpec:
    strength_mCi: float
    distance_m: float
    background_rate: float
    anomaly: Density | None = None

    def __post_init__(self):
        if not self.strength_mCi > 0:
            raise DomainError(f"strength_mCi must be > 0, got {self.strength_mCi!r}")
        if not self.distance_m > 0:
            raise DomainError(f"distance_m must be > 0, got {self.distance_m!r}")
        if not self.background_rate > 0:
            raise DomainError(f"background_rate must be > 0, got {self.background_rate!r}")


# count rate of the calibration source at 5 cm, and air attenuation per metre
_REF_MCI = 0.000844
_REF_RATE = 630.0
_REF_DIST = 0.05
_AIR_ATTENUATION = 0.0100029


def source_rate(spec: SourceSpec) -> float:
    """Counts per step contributed by a point source at ``distance_m`` metres."""
    d = spec.distance_m
    if not d > 0:
        raise DomainError(f"distance must be > 0, got {d!r}")
    return (spec.strength_mCi / _REF_MCI * _REF_RATE * (_REF_DIST / d) ** 2
            * math.exp(-_AIR_ATTENUATION * (d + _REF_DIST)))


def anomaly_weight(lambda0: float, lambda_source: float) -> float:
    """Weight of the background in the post-change mixture."""
    if not lambda0 > 0:
        raise DomainError(f"lambda0 must be > 0, got {lambda0!r}")
    if lambda_source < 0:
        raise DomainError(f"lambda_source must be >= 0, got {lambda_source!r}")
    return lambda0 / (lambda0 + lambda_source)


def source_post_density(f0: Density, spec: SourceSpec) -> Density:
    if spec.anomaly is None:
        raise ValueError("source spec has no anomaly density")
    w = anomaly_weight(spec.background_rate, source_rate(spec))
    return mix_densities(f0, spec.anomaly, w)


@dataclass(frozen=True)
class Scenario:
    """Generative description of one stream.

    ``changepoint`` is the last pre-change step (``None``: no change within the
    horizon). With ``fixed_count`` every step carries exactly ``round(mu)``
    observations instead of a Poisson number.
    """

    pre: Density
    post: Density
    mu: float
    horizon: int
    changepoint: int | None = None
    mode: str = "binned"
    fixed_count: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.changepoint is not None and not 0 <= self.changepoint < self.horizon:
            raise ValueError(f"changepoint must lie in [0, horizon), got {self.changepoint!r}")
        if self.mode not in ("binned", "raw"):
            raise ValueError(f"mode must be 'binned' or 'raw', got {self.mode!r}")
        if self.pre.bin_count != self.post.bin_count:
            raise DimensionError("pre and post densities have different bin counts")
        if self.mode == "raw" and (self.pre.mixture is None or self.post.mixture is None):
            raise ValueError("raw mode needs analytic mixtures for both densities")

    def null(self, horizon: int | None = None) -> "Scenario":
        """The same background with no change."""
        return Scenario(self.pre, self.pre, self.mu, horizon or self.horizon, None, self.mode,
                        self.fixed_count)

    def with_changepoint(self, v: int | None) -> "Scenario":
        return Scenario(self.pre, self.post, self.mu, self.horizon, v, self.mode, self.fixed_count)


@dataclass
class Stream:
    totals: np.ndarray
    changepoint: int | None
    counts: np.ndarray | None = None
    samples: list | None = None
    _pre: Density | None = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return int(self.totals.size)

    @property
    def means(self) -> np.ndarray:
        """(T, 2) array of per-step sample mean and count (mean 0 when a step is empty)."""
        if self.samples is None:
            raise ValueError("stream has no raw samples")
        ybar = np.array([s.mean() if s.size else 0.0 for s in self.samples])
        return np.column_stack([ybar, self.totals.astype(np.float64)])

    def data_for(self, kind: str):
        if kind == "counts":
            if self.counts is None:
                if self._pre is None or self.samples is None:
                    raise ValueError("stream has no counts")
                self.counts = np.vstack([self._pre.bin_samples(s) for s in self.samples])
            return self.counts
        if kind == "samples":
            if self.samples is None:
                raise ValueError("stream has no raw samples")
            return self.samples
        if kind == "means":
            return self.means
        raise ValueError(f"unknown input kind {kind!r}")


def sample_counts(d: Density, mu: float, rng) -> CountVector:
    """One step: ``N ~ Poisson(mu)`` then ``Multinomial(N, weights)``."""
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu!r}")
    rng = make_rng(rng)
    n = int(rng.poisson(mu))
    return CountVector(rng.multinomial(n, d.weights))


def generate_stream(s: Scenario, rng) -> Stream:
    rng = make_rng(rng)
    T = s.horizon
    if s.fixed_count:
        N = np.full(T, int(round(s.mu)), dtype=np.int64)
    else:
        N = rng.poisson(s.mu, size=T).astype(np.int64)
    v = T if s.changepoint is None else s.changepoint
    if s.mode == "binned":
        counts = np.empty((T, s.pre.bin_count), dtype=np.int64)
        if v:
            counts[:v] = rng.multinomial(N[:v], s.pre.weights)
        if v < T:
            counts[v:] = rng.multinomial(N[v:], s.post.weights)
        return Stream(N, s.changepoint, counts=counts)
    y = np.concatenate([s.pre.mixture.sample(int(N[:v].sum()), rng),
                        s.post.mixture.sample(int(N[v:].sum()), rng)])
    samples = np.split(y, np.cumsum(N)[:-1])
    pre = s.pre if s.pre.support is not None else None
    return Stream(N, s.changepoint, samples=samples, _pre=pre)


@dataclass(frozen=True)
class DelayRecord:
    """Outcome of one detector on one stream.

    ``delay`` is ``first_alarm - changepoint`` for the first alarm after the
    change; a run without such an alarm is censored at ``horizon - changepoint``.
    """

    detector: str
    changepoint: int | None
    horizon: int
    first_alarm: int | None
    delay: float
    censored: bool
    false_alarms: int

    @property
    def pre_change_steps(self) -> int:
        return self.horizon if self.changepoint is None else self.changepoint


def _record(name: str, alarms: np.ndarray, v: int | None) -> DelayRecord:
    T = alarms.size
    if v is None:
        return DelayRecord(name, None, T, None, math.nan, True, int(alarms.sum()))
    after = np.flatnonzero(alarms[v:])
    fa = int(alarms[:v].sum())
    if after.size:
        tau = v + int(after[0]) + 1
        return DelayRecord(name, v, T, tau, float(tau - v), False, fa)
    return DelayRecord(name, v, T, None, float(T - v), True, fa)


def _alarms(det, stream: Stream) -> np.ndarray:
    return det.predict(stream.data_for(det.input_kind))


def run_scenario(s: Scenario, detectors: dict, seed) -> dict:
    """Stream one realisation of ``s`` through every fitted detector.

    All detectors see the same data. Returns ``{name: DelayRecord}``.
    """
    stream = generate_stream(s, make_rng(seed))
    return {name: _record(name, _alarms(det, stream), s.changepoint)
            for name, det in detectors.items()}


def _null_rep(args):
    null, detectors, ss = args
    stream = generate_stream(null, make_rng(ss))
    out = {}
    for name, det in detectors.items():
        stat, _, _, skipped = det.path(stream.data_for(det.input_kind))
        stat = np.array(stat, dtype=np.float64)
        if skipped is not None:
            stat[skipped] = -np.inf
        out[name] = stat
    return out


def null_paths(null: Scenario, detectors: dict, horizon: int, reps: int, seed,
               n_jobs: int = 1) -> dict:
    """Per-step statistics of every detector on ``reps`` null streams.

    Returns ``{name: (reps, horizon) array}``; skipped steps hold ``-inf``.
    """
    if null.changepoint is not None and null.changepoint < horizon:
        raise ValueError("null scenario has a changepoint inside the horizon")
    null = Scenario(null.pre, null.pre, null.mu, horizon, None, null.mode, null.fixed_count)
    seeds = _seed_sequence(seed).spawn(reps)
    jobs = [(null, detectors, ss) for ss in seeds]
    if n_jobs == 1:
        results = [_null_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_null_rep, jobs))
    return {name: np.vstack([r[name] for r in results]) for name in detectors}


@dataclass(frozen=True)
class DelaySummary:
    mean_delay: float
    detection_fraction: float
    n_runs: int
    n_censored: int
    mean_false_alarms: float
    false_alarm_rate: float  # false alarms per pre-change step
    policy: str


def average_detection_delay(records, policy: str = "horizon") -> DelaySummary:
    """Average delay over replicates.

    ``policy="horizon"`` counts censored runs at their maximum observable delay
    ``horizon - v``; ``policy="exclude"`` averages detected runs only.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to summarise")
    if policy not in ("horizon", "exclude"):
        raise ValueError(f"unknown censoring policy {policy!r}")
    with_change = [r for r in records if r.changepoint is not None]
    detected = [r for r in with_change if not r.censored]
    pool = with_change if policy == "horizon" else detected
    mean = float(np.mean([r.delay for r in pool])) if pool else math.nan
    frac = len(detected) / len(with_change) if with_change else 0.0
    fa = [r.false_alarms for r in records]
    steps = sum(r.pre_change_steps for r in records)
    return DelaySummary(
        mean_delay=mean,
        detection_fraction=float(frac),
        n_runs=len(records),
        n_censored=sum(r.censored for r in records),
        mean_false_alarms=float(np.mean(fa)),
        false_alarm_rate=float(sum(fa) / steps) if steps else math.nan,
        policy=policy,
    )
