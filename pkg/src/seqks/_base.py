"""Estimator plumbing shared by every detector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DetectorHalted, NotFittedError


class StreamDetector(BaseEstimator):
    """Base class for sequential detectors with an sklearn-style surface.

    Subclasses implement ``_fit``, ``_new_state``, ``_step`` (one streaming
    update returning a ``StepOutcome``) and ``_path`` (whole-stream batch
    evaluation returning ``(stat, argmax_start, argmax_bin, skipped)``; the
    last three may be ``None``).

    ``fit`` fixes the reference distribution and the threshold; ``transform``
    and ``predict`` evaluate a whole stream from a fresh state and leave the
    streaming state untouched; ``update`` advances the streaming state by one
    step.
    """

    input_kind = "counts"
    # PKS alarms on a strict crossing; every other rule on >=
    strict_alarm = False

    def fit(self, X=None, y=None):
        self._fit(X)
        if self.threshold is None:
            self.threshold_ = float(self._default_threshold())
        else:
            self.threshold_ = float(self.threshold)
            if not np.isfinite(self.threshold_) and self.threshold_ != np.inf:
                raise ValueError(f"threshold must be a real number, got {self.threshold!r}")
        self.reset()
        return self

    def _default_threshold(self):
        raise ValueError(
            f"{type(self).__name__} has no analytic threshold; pass threshold= "
            "or calibrate with seqks.calibration.calibrate_monte_carlo"
        )

    def _check_fitted(self):
        if not hasattr(self, "threshold_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit first")

    def reset(self):
        """Drop all streaming state (the fitted reference and threshold are kept)."""
        self._check_fitted()
        self._state = self._new_state()
        self._t = 0
        self.halted_ = False
        return self

    def update(self, x):
        """Consume one time step and return its ``StepOutcome``."""
        self._check_fitted()
        if self.halt_on_alarm and self.halted_:
            raise DetectorHalted("detector already alarmed and halt_on_alarm is set")
        out = self._step(x)
        self._t = out.t
        if out.alarm and self.halt_on_alarm:
            self.halted_ = True
        return out

    def is_alarm(self, stat):
        stat = np.asarray(stat)
        return stat > self.threshold_ if self.strict_alarm else stat >= self.threshold_

    def path(self, X):
        """Whole-stream evaluation: ``(stat, argmax_start, argmax_bin, skipped)``."""
        self._check_fitted()
        return self._path(X)

    def statistic_path(self, X) -> np.ndarray:
        return self.path(X)[0]

    def transform(self, X) -> np.ndarray:
        return self.statistic_path(X)[:, None]

    def predict(self, X) -> np.ndarray:
        stat, _, _, skipped = self.path(X)
        alarms = self.is_alarm(stat)
        if skipped is not None:
            alarms &= ~skipped
        return alarms

    def first_alarm(self, X):
        """1-based time of the first alarm in ``X``, or ``None``."""
        hits = np.flatnonzero(self.predict(X))
        return int(hits[0]) + 1 if hits.size else None
