"""Regenerate the synthetic spectra used by ``cesium_style.yaml``.

The background is a falling continuum with two broad peaks; the Cs-137
anomaly is a photopeak near channel 550 on top of a Compton shelf. Both are
stylised shapes, not measurements.
"""

from pathlib import Path

import numpy as np

from seqks.spectrum_io import write_spectrum

D = 2048
HERE = Path(__file__).parent


def _peak(j, centre, width, height):
    return height * np.exp(-0.5 * ((j - centre) / width) ** 2)


def background(total=10_000_000):
    j = np.arange(1, D + 1, dtype=float)
    shape = np.exp(-j / 180.0) + 0.02 * np.exp(-j / 900.0)
    shape += _peak(j, 120, 25, 0.15) + _peak(j, 1210, 40, 0.004)
    return np.round(total * shape / shape.sum()).astype(np.int64)


def cs137():
    j = np.arange(1, D + 1, dtype=float)
    shelf = np.where(j < 395, 0.25 + 0.15 * j / 395, 0.0)
    shape = shelf + _peak(j, 550, 18, 3.0) + _peak(j, 160, 30, 0.3)
    return shape / shape.sum()


if __name__ == "__main__":
    write_spectrum(HERE / "background.csv", background(), kind="count")
    write_spectrum(HERE / "cs137.csv", cs137(), kind="weight")
