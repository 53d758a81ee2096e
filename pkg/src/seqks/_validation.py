"""Input validation helpers shared by the detectors."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_count_matrix(X, n_bins: int | None = None) -> np.ndarray:
    """Validate a (n_steps, n_bins) array of non-negative integer counts.

    Returns a C-contiguous int64 copy-or-view. Float input is accepted only
    when every entry is integral.
    """
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=0,
                    ensure_all_finite=True)
    if X.dtype.kind == "f":
        if not np.all(np.floor(X) == X):
            raise ValueError("counts must be integers")
    elif X.dtype.kind not in "iub":
        raise ValueError(f"counts must be numeric, got dtype {X.dtype}")
    X = np.ascontiguousarray(X, dtype=np.int64)
    if X.size and X.min() < 0:
        raise ValueError("counts must be non-negative")
    if n_bins is not None and X.shape[1] != n_bins:
        raise DimensionError(f"expected {n_bins} bins, got {X.shape[1]}")
    return X


def check_count_vector(x, n_bins: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"count vector must be 1-D, got shape {x.shape}")
    return check_count_matrix(x[None, :], n_bins)[0]


def check_positive(value, name: str, *, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_window(window) -> int:
    if isinstance(window, bool) or not isinstance(window, numbers.Integral) or window < 1:
        raise ValueError(f"window must be a positive integer, got {window!r}")
    return int(window)


def check_same_bins(a: int, b: int) -> None:
    if a != b:
        raise DimensionError(f"bin count mismatch: {a} != {b}")
