"""Reading and writing background spectrum files.

A spectrum file is UTF-8 CSV with a ``bin,weight`` or ``bin,count`` header
and one row per channel, in channel order. Counts and weights are both
normalised on load.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .exceptions import SpectrumParseError
from .ks_core import SpectrumCdf
from .simulation import Density

__all__ = ["read_spectrum", "write_spectrum", "winsorize"]

_HEADERS = {("bin", "weight"), ("bin", "count")}


def winsorize(weights, cutoff: int) -> np.ndarray:
    """Fold every channel above ``cutoff`` into channel ``cutoff`` (1-based)."""
    w = np.asarray(weights, dtype=np.float64)
    if cutoff < 1:
        raise ValueError(f"winsorize cutoff must be >= 1, got {cutoff!r}")
    if cutoff >= w.size:
        return w.copy()
    out = w[:cutoff].copy()
    out[-1] += w[cutoff:].sum()
    return out


def read_spectrum(path, winsorize_at: int | None = None) -> tuple[SpectrumCdf, Density]:
    """Parse a spectrum file into its CDF and per-bin density."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(enumerate(csv.reader(fh), start=1))
    rows = [(n, r) for n, r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise SpectrumParseError("empty spectrum file", line=1)
    lineno, header = rows[0]
    header = tuple(h.strip().lower() for h in header)
    if header not in _HEADERS:
        raise SpectrumParseError(
            f"header must be 'bin,weight' or 'bin,count', got {','.join(header)!r}", line=lineno)
    kind = header[1]
    values = []
    for expected, (lineno, row) in enumerate(rows[1:], start=1):
        if len(row) != 2:
            raise SpectrumParseError(f"expected 2 columns, got {len(row)}", line=lineno)
        try:
            b = int(row[0])
            v = float(row[1])
        except ValueError:
            raise SpectrumParseError(f"non-numeric cell in {row!r}", line=lineno) from None
        if b != expected:
            raise SpectrumParseError(f"expected bin {expected}, got {b}", line=lineno)
        if not math.isfinite(v) or v < 0:
            raise SpectrumParseError(f"{kind} must be finite and >= 0, got {row[1]!r}", line=lineno)
        if kind == "count" and v != int(v):
            raise SpectrumParseError(f"count must be an integer, got {row[1]!r}", line=lineno)
        values.append(v)
    if not values:
        raise SpectrumParseError("spectrum has no channels", line=lineno)
    w = np.array(values)
    if winsorize_at is not None:
        w = winsorize(w, winsorize_at)
    if not w.sum() > 0:
        raise SpectrumParseError("spectrum total is zero", line=lineno)
    density = Density.from_counts(w)
    return density.cdf, density


def write_spectrum(path, values, kind: str = "weight") -> None:
    if kind not in ("weight", "count"):
        raise ValueError("kind must be 'weight' or 'count'")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bin", kind])
        for j, v in enumerate(values, start=1):
            out.writerow([j, int(v) if kind == "count" else repr(float(v))])
