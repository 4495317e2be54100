"""Constrained derivative dynamic time warping (cDDTW) and distance matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import TooShort


@dataclass(frozen=True)
class DistanceMatrix:
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(d, d.T, atol=1e-9, rtol=0):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0) or np.any(d < 0):
            raise ValueError("distance matrix needs a zero diagonal and non-negative entries")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]


def derivative(x) -> np.ndarray:
    """Keogh-Pazzani derivative estimate; endpoints copy their neighbours."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise TooShort("derivative needs at least 3 samples")
    d = np.empty_like(x)
    d[1:-1] = ((x[1:-1] - x[:-2]) + (x[2:] - x[:-2]) / 2) / 2
    d[0] = d[1]
    d[-1] = d[-2]
    return d


def dtw_cost(a, b, band: int | None = None) -> float:
    """Accumulated squared-difference DTW cost with an optional Sakoe-Chiba band.

    Evaluated one anti-diagonal at a time; every cell sees exactly the same
    additions as the textbook row-by-row recurrence, so the result is
    bit-for-bit symmetric in (a, b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = a.size, b.size
    if band is None:
        band = max(n, m)
    band = max(band, abs(n - m))
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        keep = np.abs(i - j) <= band
        i, j = i[keep], j[keep]
        if i.size == 0:
            continue
        best = np.minimum(acc[i - 1, j - 1], np.minimum(acc[i - 1, j], acc[i, j - 1]))
        diff = a[i - 1] - b[j - 1]
        acc[i, j] = diff * diff + best
    return float(acc[n, m])


def cddtw_distance(a, b, window_frac: float = 0.1) -> float:
    if not 0 < window_frac <= 1:
        raise ValueError("window_frac must lie in (0, 1]")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or b.size < 3:
        raise TooShort("cDDTW needs series of length >= 3")
    band = math.ceil(window_frac * max(a.size, b.size))
    return dtw_cost(derivative(a), derivative(b), band)


def build_distance_matrix(sources: Sequence, window_frac: float = 0.1) -> DistanceMatrix:
    n = len(sources)
    if n < 2:
        raise ValueError("need at least 2 sources")
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = cddtw_distance(sources[i], sources[j], window_frac)
    return DistanceMatrix(d)
