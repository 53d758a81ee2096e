"""Comparison detectors: pooled KS, exponential-family Bayes factors and GLR.

The Poisson forms treat channel ``j`` at every step as Poisson with known
null rate ``lambda0_j``. The Gaussian forms work on per-step sample means
``ybar_t`` of ``n_t`` observations with known null N(0, sigma^2).

Windowed rules scan the windows ``s = max(t-L+1, 1), ..., t``. The EF
statistic is a *sum* of Bayes factors over those windows and is reported on
the log scale (``w_stat = log sum_s BF(s, t)``) so it stays finite; its
thresholds live on the same scale.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from . import _kernels
from ._base import StreamDetector
from ._validation import check_count_matrix, check_count_vector, check_positive, check_window
from .exceptions import DimensionError
from .ks_core import SpectrumCdf, StepOutcome, _as_cdf, _ks_gap

__all__ = [
    "PooledState",
    "PoissonNull",
    "GaussianNull",
    "pooled_ks_step",
    "ef_poisson_step",
    "glr_poisson_step",
    "ef_gaussian_step",
    "glr_gaussian_step",
    "PooledKSDetector",
    "EFPoissonDetector",
    "GLRPoissonDetector",
    "EFGaussianDetector",
    "GLRGaussianDetector",
]


class PooledState:
    """Per-bin counts accumulated since ``t = 1``."""

    def __init__(self, n_bins: int):
        self.cum = np.zeros(n_bins, dtype=np.int64)
        self.total = 0
        self.t = 0

    def push(self, x: np.ndarray) -> None:
        self.cum += x
        self.total += int(x.sum())
        self.t += 1


@dataclass(frozen=True)
class PoissonNull:
    """Per-channel null rates (counts per step).

    Channels with a zero rate cannot take part in a likelihood ratio and are
    dropped with a warning; ``active`` marks the channels kept.
    """

    lambda0: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambda0, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("lambda0 must be a non-empty 1-D array")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambda0 must be finite and non-negative")
        if not np.any(lam > 0):
            raise ValueError("lambda0 must have at least one positive rate")
        n_zero = int(np.sum(lam == 0))
        if n_zero:
            warnings.warn(f"{n_zero} zero-rate channel(s) excluded from Poisson likelihoods",
                          stacklevel=3)
        object.__setattr__(self, "lambda0", lam)

    @classmethod
    def from_density(cls, weights, rate: float) -> "PoissonNull":
        return cls(rate * np.asarray(weights, dtype=np.float64))

    @property
    def active(self) -> np.ndarray:
        return self.lambda0 > 0

    @property
    def bin_count(self) -> int:
        return int(self.lambda0.size)


@dataclass(frozen=True)
class GaussianNull:
    """Null N(0, sigma^2) per observation; ``tau`` is the EF prior sd of the shift."""

    sigma: float
    n_per_step: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        check_positive(self.sigma, "sigma")
        check_positive(self.tau, "tau")
        if not self.n_per_step >= 1:
            raise ValueError(f"n_per_step must be >= 1, got {self.n_per_step!r}")


def pooled_ks_step(state: PooledState, cdf0: SpectrumCdf, x, c: float) -> StepOutcome:
    """``kappa_t = N_{1:t} max_j |F0(j) - Fhat_{1:t}(j)|``; alarm when ``kappa_t > c``."""
    x = check_count_vector(x, cdf0.bin_count)
    state.push(x)
    if state.total == 0:
        return StepOutcome(t=state.t, w_stat=0.0, alarm=False, skipped=True)
    gap, j = _ks_gap(cdf0.values, np.cumsum(state.cum), np.asarray(state.total))
    kappa = float(state.total * gap)
    return StepOutcome(state.t, kappa, kappa > c, 1, int(j) + 1)


def _suffix_sums(window: np.ndarray) -> np.ndarray:
    # row r: sum of the last r+1 rows (newest last in ``window``)
    return np.cumsum(window[::-1], axis=0)


def _poisson_window(window, null: PoissonNull) -> np.ndarray:
    W = check_count_matrix(window, null.bin_count)
    if W.shape[0] == 0:
        raise ValueError("window must hold at least one step")
    return W[:, null.active]


def _outcome(t, stats, best, c, log_sum=False, ge=True):
    w = float(logsumexp(stats)) if log_sum else float(stats[best])
    return StepOutcome(t=t, w_stat=w, alarm=w >= c if ge else w > c,
                       argmax_start=t - best)


def ef_poisson_step(window, null: PoissonNull, c: float, t: int | None = None) -> StepOutcome:
    """Log of the summed Bayes factors under independent Gamma(1, 1) channel priors.

    Per channel, with ``S`` counts over ``m`` steps,
    ``log BF = log S! - (S+1) log(m+1) - S log lambda0 + m lambda0``.
    """
    W = _poisson_window(window, null)
    lam = null.lambda0[null.active]
    S = _suffix_sums(W)
    m = np.arange(1, W.shape[0] + 1)[:, None]
    logbf = (gammaln(S + 1.0) - (S + 1.0) * np.log(m + 1.0) - S * np.log(lam) + m * lam).sum(axis=1)
    t = W.shape[0] if t is None else t
    best = _last_argmax(logbf)
    return _outcome(t, logbf, best, c, log_sum=True)


def glr_poisson_step(window, null: PoissonNull, c: float, t: int | None = None) -> StepOutcome:
    """Max over windows of the Poisson log-likelihood ratio at the channel MLEs."""
    W = _poisson_window(window, null)
    lam = null.lambda0[null.active]
    S = _suffix_sums(W)
    m = np.arange(1, W.shape[0] + 1)[:, None]
    llr = (xlogy(S, S / (m * lam)) - (S - m * lam)).sum(axis=1)
    t = W.shape[0] if t is None else t
    best = _last_argmax(llr)
    return _outcome(t, llr, best, c)


def _last_argmax(values) -> int:
    # index into suffix rows; the largest index is the oldest window, which wins ties
    values = np.asarray(values)
    return int(values.size - 1 - np.argmax(values[::-1]))


def _gauss_window(ybar, n, null: GaussianNull):
    ybar = np.atleast_1d(np.asarray(ybar, dtype=np.float64))
    if ybar.size == 0:
        raise ValueError("window must hold at least one step")
    n = np.full(ybar.shape, float(null.n_per_step)) if n is None else np.asarray(n, float)
    if n.shape != ybar.shape:
        raise DimensionError("ybar and n must have the same length")
    return ybar, n


def _gauss_suffix(ybar, n, sigma):
    w = n / sigma ** 2
    prec = np.cumsum(w[::-1])
    b = np.cumsum((w * np.where(n > 0, ybar, 0.0))[::-1])
    return prec, b


def ef_gaussian_step(ybar, null: GaussianNull, c: float, n=None, t: int | None = None) -> StepOutcome:
    """Log of the summed conjugate-normal Bayes factors (prior N(0, tau^2) on the shift)."""
    ybar, n = _gauss_window(ybar, n, null)
    prec, b = _gauss_suffix(ybar, n, null.sigma)
    t2 = null.tau ** 2
    logbf = -0.5 * np.log1p(t2 * prec) + t2 * b * b / (2.0 * (1.0 + t2 * prec))
    t = ybar.size if t is None else t
    return _outcome(t, logbf, _last_argmax(logbf), c, log_sum=True)


def glr_gaussian_step(ybar, null: GaussianNull, c: float, n=None, t: int | None = None,
                      variance_change: bool = False) -> StepOutcome:
    """Max over windows of the Gaussian log-likelihood ratio at the MLE of the shift.

    With ``variance_change`` the scale is maximised too (windows of fewer than
    two non-empty steps are skipped).
    """
    ybar, n = _gauss_window(ybar, n, null)
    t = ybar.size if t is None else t
    nz = n > 0
    y0 = np.where(nz, ybar, 0.0)
    sw = np.cumsum(n[::-1])
    swy = np.cumsum((n * y0)[::-1])
    swy2 = np.cumsum((n * y0 * y0)[::-1])
    m = np.cumsum(nz[::-1])
    s2 = null.sigma ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        if variance_change:
            var_hat = (swy2 - swy * swy / sw) / m
            stat = -0.5 * m * np.log(var_hat / s2) - 0.5 * m + swy2 / (2.0 * s2)
            ok = (m >= 2) & (var_hat > 0)
        else:
            stat = swy * swy / (2.0 * s2 * sw)
            ok = m >= 1
    if not ok.any():
        return StepOutcome(t=t, w_stat=0.0, alarm=False, skipped=True)
    stat = np.where(ok, stat, -np.inf)
    return _outcome(t, stat, _last_argmax(stat), c)


class PooledKSDetector(StreamDetector):
    """Pooled KS: all data since the start, scaled by the raw total count."""

    input_kind = "counts"
    strict_alarm = True

    def __init__(self, reference=None, threshold=None, halt_on_alarm=False):
        self.reference = reference
        self.threshold = threshold
        self.halt_on_alarm = halt_on_alarm

    def _fit(self, X):
        if self.reference is not None:
            self.cdf0_ = _as_cdf(self.reference)
        elif X is not None:
            self.cdf0_ = SpectrumCdf.from_counts(check_count_matrix(X))
        else:
            raise ValueError("need either reference or background counts X")

    def _new_state(self):
        return PooledState(self.cdf0_.bin_count)

    def _step(self, x):
        return pooled_ks_step(self._state, self.cdf0_, x, self.threshold_)

    def _path(self, X):
        X = check_count_matrix(X, self.cdf0_.bin_count)
        C = np.cumsum(np.cumsum(X, axis=0), axis=1)
        tot = C[:, -1]
        skipped = tot == 0
        kappa = np.zeros(X.shape[0])
        jbin = np.zeros(X.shape[0], dtype=np.int64)
        ok = ~skipped
        if ok.any():
            gap, j = _ks_gap(self.cdf0_.values, C[ok], tot[ok])
            kappa[ok] = tot[ok] * gap
            jbin[ok] = j + 1
        return kappa, np.where(ok, 1, 0), jbin, skipped


def _as_poisson_null(reference, X, rate):
    if isinstance(reference, PoissonNull):
        return reference
    if reference is not None:
        if rate is not None:
            weights = _as_cdf(reference).weights if not isinstance(reference, np.ndarray) else reference
            return PoissonNull.from_density(weights, rate)
        return PoissonNull(np.asarray(reference, dtype=np.float64))
    if X is not None:
        return PoissonNull(check_count_matrix(X).mean(axis=0))
    raise ValueError("need either reference rates or background counts X")


class _WindowedPoisson(StreamDetector):
    input_kind = "counts"

    def __init__(self, reference=None, window=50, threshold=None, rate=None,
                 halt_on_alarm=False):
        self.reference = reference
        self.window = window
        self.threshold = threshold
        self.rate = rate
        self.halt_on_alarm = halt_on_alarm

    def _fit(self, X):
        check_window(self.window)
        self.null_ = _as_poisson_null(self.reference, X, self.rate)
        lam = self.null_.lambda0[self.null_.active]
        self._loglam = np.log(lam)
        self._lam_total = float(lam.sum())

    def _new_state(self):
        return deque(maxlen=self.window)

    def _step(self, x):
        x = check_count_vector(x, self.null_.bin_count)
        self._state.append(x)
        return self._step_fn(np.array(self._state), self.null_, self.threshold_, t=self._t + 1)

    def _prepare(self, X):
        X = check_count_matrix(X, self.null_.bin_count)
        Xa = np.ascontiguousarray(X[:, self.null_.active])
        return Xa, Xa @ self._loglam

    def _table_size(self, Xa):
        if Xa.size == 0:
            return 1
        # largest possible window sum per channel
        csum = np.cumsum(np.vstack([np.zeros((1, Xa.shape[1]), np.int64), Xa]), axis=0)
        L = min(self.window, Xa.shape[0])
        return int((csum[L:] - csum[:-L]).max()) + 1


class EFPoissonDetector(_WindowedPoisson):
    """Exponential-family rule with Gamma(1, 1) channel priors; ``w_stat`` is log scale."""

    _step_fn = staticmethod(ef_poisson_step)

    def _path(self, X):
        Xa, row_dot = self._prepare(X)
        lfact = gammaln(np.arange(self._table_size(Xa)) + 1.0)
        stat, start = _kernels.ef_poisson_path(Xa, row_dot, self._lam_total, lfact, self.window)
        return stat, start, None, None


class GLRPoissonDetector(_WindowedPoisson):
    """Window-limited Poisson GLR over per-channel rates."""

    _step_fn = staticmethod(glr_poisson_step)

    def _path(self, X):
        Xa, row_dot = self._prepare(X)
        k = np.arange(self._table_size(Xa), dtype=np.float64)
        stat, start = _kernels.glr_poisson_path(Xa, row_dot, self._lam_total, xlogy(k, k),
                                                self.window)
        return stat, start, None, None


def _check_means(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] not in (1, 2):
        raise ValueError("means input must be (T,) ybar or (T, 2) [ybar, n]")
    return X


class _WindowedGaussian(StreamDetector):
    input_kind = "means"

    def _fit(self, X):
        check_window(self.window)
        self.null_ = GaussianNull(self.sigma, self.n_per_step, getattr(self, "tau", 1.0))

    def _new_state(self):
        return deque(maxlen=self.window)

    def _split(self, X):
        X = _check_means(X)
        n = X[:, 1] if X.shape[1] == 2 else np.full(X.shape[0], float(self.n_per_step))
        return np.ascontiguousarray(X[:, 0]), np.ascontiguousarray(n)

    def _step(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        self._state.append((x[0], x[1] if x.size > 1 else float(self.n_per_step)))
        arr = np.array(self._state)
        return self._step_window(arr[:, 0], arr[:, 1])


class EFGaussianDetector(_WindowedGaussian):
    """Conjugate-normal Bayes-factor rule for a mean shift; ``w_stat`` is log scale."""

    def __init__(self, sigma=1.0, tau=1.0, n_per_step=1, window=50, threshold=None,
                 halt_on_alarm=False):
        self.sigma = sigma
        self.tau = tau
        self.n_per_step = n_per_step
        self.window = window
        self.threshold = threshold
        self.halt_on_alarm = halt_on_alarm

    def _step_window(self, ybar, n):
        return ef_gaussian_step(ybar, self.null_, self.threshold_, n=n, t=self._t + 1)

    def _path(self, X):
        ybar, n = self._split(X)
        stat, start = _kernels.ef_gaussian_path(ybar, n, float(self.sigma), float(self.tau),
                                                self.window)
        return stat, start, None, None


class GLRGaussianDetector(_WindowedGaussian):
    """Window-limited Gaussian GLR for a mean shift, optionally with a scale change."""

    def __init__(self, sigma=1.0, n_per_step=1, window=50, threshold=None,
                 variance_change=False, halt_on_alarm=False):
        self.sigma = sigma
        self.n_per_step = n_per_step
        self.window = window
        self.threshold = threshold
        self.variance_change = variance_change
        self.halt_on_alarm = halt_on_alarm

    def _step_window(self, ybar, n):
        return glr_gaussian_step(ybar, self.null_, self.threshold_, n=n, t=self._t + 1,
                                 variance_change=self.variance_change)

    def _path(self, X):
        ybar, n = self._split(X)
        stat, start, skipped = _kernels.glr_gaussian_path(ybar, n, float(self.sigma), self.window,
                                                          bool(self.variance_change))
        return stat, start, None, skipped
