"""Windowed Kolmogorov-Smirnov statistics and the streaming KS detector.

The binned statistic for a block of time steps ``s..t`` is

    Delta_{s:t} = sqrt(N_{s:t}) * max_j |F0(j) - Fhat_{s:t}(j)|

and the detector statistic is ``W_t = max_s Delta_{s:t}`` over the windows
ending at ``t`` of length at most ``L``. An alarm is raised when
``W_t >= c_L``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import _kernels
from ._base import StreamDetector
from ._validation import check_count_matrix, check_count_vector, check_positive, check_window
from .exceptions import DimensionError, DomainError, EmptyWindowError

__all__ = [
    "SpectrumCdf",
    "CountVector",
    "RawSampleBatch",
    "DetectorConfig",
    "StepOutcome",
    "WindowState",
    "ks_distance",
    "ks_distance_raw",
    "kolmogorov_cdf",
    "detector_step",
    "windowed_ks_path",
    "WindowedKSDetector",
    "RawWindowedKSDetector",
]

_CDF_ATOL = 1e-12


@dataclass(frozen=True)
class SpectrumCdf:
    """Discrete background CDF ``F0(1..D)`` over ``D`` energy channels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("CDF values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(v)):
            raise ValueError("CDF values must be finite")
        if v[0] < 0:
            raise ValueError("CDF values must be >= 0")
        if np.any(np.diff(v) < 0):
            raise ValueError("CDF values must be non-decreasing")
        if abs(v[-1] - 1.0) > _CDF_ATOL:
            raise ValueError(f"last CDF value must be 1, got {v[-1]!r}")
        v[-1] = 1.0
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_weights(cls, weights) -> "SpectrumCdf":
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have positive total")
        cdf = np.cumsum(w / total)
        cdf[-1] = 1.0
        return cls(np.minimum(cdf, 1.0))

    @classmethod
    def from_counts(cls, counts) -> "SpectrumCdf":
        X = np.asarray(counts)
        if X.ndim == 2:
            X = X.sum(axis=0)
        return cls.from_weights(X)

    @property
    def bin_count(self) -> int:
        return int(self.values.size)

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.values, prepend=0.0)

    def right_edges(self, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Right endpoints of ``D`` equal-width bins partitioning ``[lo, hi]``."""
        D = self.bin_count
        return lo + (hi - lo) * np.arange(1, D + 1) / D


@dataclass(frozen=True)
class CountVector:
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "counts", check_count_vector(self.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bin_count(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class RawSampleBatch:
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64).ravel()
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class DetectorConfig:
    window: int
    threshold: float
    mode: str = "binned"
    halt_on_alarm: bool = False

    def __post_init__(self):
        check_window(self.window)
        check_positive(self.threshold, "threshold")
        if self.mode not in ("binned", "raw"):
            raise ValueError(f"mode must be 'binned' or 'raw', got {self.mode!r}")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one detector step.

    ``argmax_start``/``argmax_bin`` are 1-based and ``None`` when the step was
    skipped or the quantity does not apply to the detector.
    """

    t: int
    w_stat: float
    alarm: bool
    argmax_start: int | None = None
    argmax_bin: int | None = None
    skipped: bool = False

    def as_dict(self) -> dict:
        return {"t": self.t, "w_stat": self.w_stat, "alarm": self.alarm,
                "argmax_start": self.argmax_start}


def _ks_gap(cdf0_values: np.ndarray, cum_counts: np.ndarray, total: np.ndarray):
    """Row-wise max_j |F0(j) - C_j / N| and first arg-max, for integer cumulative counts."""
    gaps = np.abs(cdf0_values - cum_counts / total[..., None])
    j = np.argmax(gaps, axis=-1)
    return np.take_along_axis(gaps, j[..., None], axis=-1)[..., 0], j


def ks_distance(cdf0: SpectrumCdf, agg: CountVector) -> float:
    """Scaled KS distance between ``cdf0`` and the empirical CDF of ``agg``."""
    counts = agg.counts if isinstance(agg, CountVector) else check_count_vector(agg)
    if counts.size != cdf0.bin_count:
        raise DimensionError(f"expected {cdf0.bin_count} bins, got {counts.size}")
    cum = np.cumsum(counts)
    total = cum[-1]
    if total == 0:
        raise EmptyWindowError("window holds no counts")
    gap, _ = _ks_gap(cdf0.values, cum, np.asarray(total))
    return float(gap * np.sqrt(total))


def ks_distance_raw(cdf0_eval: Callable, agg) -> float:
    """Exact scaled KS distance ``sqrt(N) sup_y |F0(y) - Fhat(y)|`` for raw samples.

    ``cdf0_eval`` is treated as continuous: the supremum is taken over both
    sides of every jump of the empirical CDF.
    """
    samples = agg.samples if isinstance(agg, RawSampleBatch) else np.asarray(agg, float).ravel()
    n = samples.size
    if n == 0:
        raise EmptyWindowError("batch holds no samples")
    u = np.asarray(cdf0_eval(np.sort(samples)), dtype=np.float64)
    u = np.sort(u)
    return float(_kernels.sorted_sup_gap(u, n) * np.sqrt(n))


def kolmogorov_cdf(x: float) -> float:
    """CDF of the Kolmogorov distribution, ``K(x) = 1 - 2 sum (-1)^(k-1) exp(-2 k^2 x^2)``.

    Below x = 1 the equivalent theta-function form is summed instead, since
    the alternating series converges slowly there.
    """
    x = float(x)
    if not x >= 0:
        raise DomainError(f"x must be >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    if x < 1.0:
        # K(x) = sqrt(2 pi)/x sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8 x^2))
        acc = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * x * x))
            acc += term
            if term < 1e-12 * max(acc, 1e-300) or term == 0.0:
                break
            k += 1
        return min(1.0, math.sqrt(2.0 * math.pi) / x * acc)
    acc = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * x * x)
        if term < 1e-12:
            break
        acc += term if k % 2 else -term
        k += 1
    return min(1.0, max(0.0, 1.0 - 2.0 * acc))


class WindowState:
    """Ring buffer of the last ``L`` count vectors plus per-bin suffix sums.

    Row ``i`` of the ring holds the counts of time ``t_i``; ``suffix[i]`` holds
    the integer sum of counts from ``t_i`` through the current time. Rows are
    stored in a circular layout; :meth:`ordered` returns them oldest first.
    """

    def __init__(self, cdf0: SpectrumCdf, window: int):
        self.cdf0 = cdf0
        self.window = check_window(window)
        D = cdf0.bin_count
        self.ring = np.zeros((self.window, D), dtype=np.int64)
        self.suffix = np.zeros((self.window, D), dtype=np.int64)
        self.t = 0
        self._head = 0  # slot the next vector goes into

    @property
    def size(self) -> int:
        return min(self.t, self.window)

    def push(self, x: np.ndarray) -> None:
        slot = self._head
        # overwrite the evicted (oldest) row, then add x to every live suffix
        self.ring[slot] = x
        self.suffix[slot] = 0
        n = min(self.t + 1, self.window)
        self.suffix[(slot - np.arange(n)) % self.window] += x
        self._head = (slot + 1) % self.window
        self.t += 1

    def ordered(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ring rows, suffix sums, time indices) ordered oldest first."""
        n = self.size
        slots = (self._head - 1 - np.arange(n - 1, -1, -1)) % self.window
        times = np.arange(self.t - n + 1, self.t + 1)
        return self.ring[slots], self.suffix[slots], times

    def reset(self) -> None:
        self.ring[:] = 0
        self.suffix[:] = 0
        self.t = 0
        self._head = 0


def detector_step(state: WindowState, cfg: DetectorConfig, x) -> StepOutcome:
    """Push one count vector and evaluate ``W_t`` over the windows ending now."""
    x = x.counts if isinstance(x, CountVector) else check_count_vector(x)
    if x.size != state.cdf0.bin_count:
        raise DimensionError(f"expected {state.cdf0.bin_count} bins, got {x.size}")
    state.push(x)
    _, suffix, times = state.ordered()
    cum = np.cumsum(suffix, axis=1)
    totals = cum[:, -1]
    valid = totals > 0
    if not valid.any():
        return StepOutcome(t=state.t, w_stat=0.0, alarm=False, skipped=True)
    gap, jmax = _ks_gap(state.cdf0.values, cum[valid], totals[valid])
    stats = gap * np.sqrt(totals[valid])
    i = int(np.argmax(stats))  # rows are oldest first, so ties go to the smallest s
    w = float(stats[i])
    return StepOutcome(
        t=state.t,
        w_stat=w,
        alarm=w >= cfg.threshold,
        argmax_start=int(times[valid][i]),
        argmax_bin=int(jmax[i]) + 1,
    )


def windowed_ks_path(X, cdf0: SpectrumCdf, window: int):
    """Whole-stream ``W_t`` for a (T, D) count matrix.

    Returns ``(W, argmax_start, argmax_bin, skipped)`` with 1-based indices.
    """
    X = check_count_matrix(X, cdf0.bin_count)
    return _kernels.ks_window_path(X, cdf0.values, check_window(window))


def _as_cdf(reference) -> SpectrumCdf:
    if isinstance(reference, SpectrumCdf):
        return reference
    if hasattr(reference, "cdf") and isinstance(getattr(reference, "cdf"), SpectrumCdf):
        return reference.cdf
    return SpectrumCdf(reference)


class WindowedKSDetector(StreamDetector):
    """Sequential windowed KS detector on binned counts.

    Parameters
    ----------
    reference : SpectrumCdf, Density or array-like, optional
        Background CDF. When omitted, ``fit`` estimates it from background
        counts.
    window : int
        Maximum window length ``L``.
    threshold : float, optional
        Alarm threshold ``c_L``. When omitted, ``fit`` derives the
        conservative analytic threshold from ``horizon`` and ``alpha``.
    horizon, alpha : used only when ``threshold`` is None.
    halt_on_alarm : bool
        Refuse further updates after the first alarm.
    """

    input_kind = "counts"

    def __init__(self, reference=None, window=50, threshold=None, horizon=1000,
                 alpha=1.0, halt_on_alarm=False):
        self.reference = reference
        self.window = window
        self.threshold = threshold
        self.horizon = horizon
        self.alpha = alpha
        self.halt_on_alarm = halt_on_alarm

    def _fit(self, X):
        check_window(self.window)
        if self.reference is not None:
            self.cdf0_ = _as_cdf(self.reference)
        elif X is not None:
            self.cdf0_ = SpectrumCdf.from_counts(check_count_matrix(X))
        else:
            raise ValueError("need either reference or background counts X")
        self.n_bins_ = self.cdf0_.bin_count

    def _default_threshold(self):
        from .calibration import FalseAlarmBudget, threshold_from_bound

        return threshold_from_bound(FalseAlarmBudget(self.horizon, self.window, self.alpha))

    def _new_state(self):
        return WindowState(self.cdf0_, self.window)

    def _step(self, x):
        # DetectorConfig demands c > 0 while a bound threshold may be exactly 0
        cfg = DetectorConfig(self.window, max(self.threshold_, np.finfo(float).tiny))
        out = detector_step(self._state, cfg, x)
        return replace(out, alarm=(not out.skipped) and out.w_stat >= self.threshold_)

    def _path(self, X):
        W, start, jbin, skipped = windowed_ks_path(X, self.cdf0_, self.window)
        return W, start, jbin, skipped


class RawWindowedKSDetector(StreamDetector):
    """Windowed KS detector on raw real-valued observations.

    ``reference`` is a continuous CDF: a callable, or any object with a
    vectorised ``cdf`` method (a frozen scipy distribution works).
    Stream input is a sequence of 1-D sample arrays, one per time step.
    """

    input_kind = "samples"

    def __init__(self, reference=None, window=50, threshold=None, horizon=1000,
                 alpha=1.0, halt_on_alarm=False):
        self.reference = reference
        self.window = window
        self.threshold = threshold
        self.horizon = horizon
        self.alpha = alpha
        self.halt_on_alarm = halt_on_alarm

    def _fit(self, X):
        check_window(self.window)
        if self.reference is None:
            raise ValueError("RawWindowedKSDetector needs a continuous reference CDF")
        ref = self.reference
        self.cdf0_eval_ = ref.cdf if hasattr(ref, "cdf") and callable(ref.cdf) else ref
        if not callable(self.cdf0_eval_):
            raise ValueError("reference must be callable or expose a cdf method")

    _default_threshold = WindowedKSDetector._default_threshold

    def _transform_batch(self, samples) -> np.ndarray:
        y = np.sort(np.asarray(samples, dtype=np.float64).ravel())
        return np.sort(np.asarray(self.cdf0_eval_(y), dtype=np.float64))

    def _new_state(self):
        return deque(maxlen=self.window)

    def _step(self, samples):
        self._state.append(self._transform_batch(samples))
        self._t += 1
        u, offsets = _flatten(list(self._state))
        W, start, skipped = _kernels.raw_ks_window_path(u, offsets, self.window,
                                                        len(self._state) - 1)
        w = float(W[-1])
        s = None if skipped[-1] else int(start[-1]) + self._t - len(self._state)
        return StepOutcome(self._t, w, (not skipped[-1]) and w >= self.threshold_, s, None,
                           bool(skipped[-1]))

    def _path(self, samples):
        u, offsets = _flatten([self._transform_batch(s) for s in samples])
        W, start, skipped = _kernels.raw_ks_window_path(u, offsets, self.window)
        return W, start, None, skipped


def _flatten(batches):
    offsets = np.zeros(len(batches) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([b.size for b in batches])
    u = np.concatenate(batches) if batches else np.zeros(0)
    return np.ascontiguousarray(u, dtype=np.float64), offsets
