"""Histogram KL divergence between spatial streams and the correlation filter
that removes false positives next to occupied streams."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import MdfError


class TooFewSamples(MdfError):
    code = "TooFewSamples"


MIN_SAMPLES = 30


def kl_divergence(p_samples, q_samples, bins: int = 20) -> float:
    """sum p log(p/q) over add-one smoothed histograms on the union range."""
    p = np.asarray(p_samples, dtype=float).ravel()
    q = np.asarray(q_samples, dtype=float).ravel()
    if p.size < MIN_SAMPLES or q.size < MIN_SAMPLES:
        raise TooFewSamples(f"need >= {MIN_SAMPLES} samples per set")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    hp, _ = np.histogram(p, edges)
    hq, _ = np.histogram(q, edges)
    pp = (hp + 1.0) / (p.size + bins)
    qq = (hq + 1.0) / (q.size + bins)
    return float(max(0.0, np.sum(pp * np.log(pp / qq))))


def neighbor_divergences(streams: Sequence, bins: int = 20) -> np.ndarray:
    """KL(stream_i || stream_{i+1}) for each adjacent pair of spatial streams."""
    samples = [getattr(s, "samples", s) for s in streams]
    return np.array([kl_divergence(samples[i], samples[i + 1], bins)
                     for i in range(len(samples) - 1)])


def calibrate_threshold(empty_divergences, n_sigma: float = 3.0, domain: str = "log") -> float:
    """Decision threshold from empty-room divergences: mean + n_sigma * deviation.

    Histogram KL estimates are right-skewed (roughly chi-square), so by default
    the mean and deviation are taken of log divergences and mapped back.
    ``domain="linear"`` uses the raw values.
    """
    x = np.asarray(empty_divergences, dtype=float).ravel()
    if x.size < 2:
        raise TooFewSamples("calibration needs at least 2 empty-room divergences")
    if domain == "linear":
        return float(x.mean() + n_sigma * x.std())
    if domain != "log":
        raise ValueError(f"unknown domain {domain!r}")
    lx = np.log(np.maximum(x, 1e-12))
    return float(np.exp(lx.mean() + n_sigma * lx.std()))


def false_positive_filter(streams: Sequence, predictions: Sequence[bool],
                          threshold: float = 0.9) -> list[bool]:
    """Demote occupied streams that mostly echo a stronger occupied neighbour.

    For a stream predicted occupied, take the occupied neighbour (index +-1)
    with the highest Pearson correlation.  If that correlation exceeds
    ``threshold`` and the neighbour's activity power (variance) is strictly
    larger, the stream is set to unoccupied.  Decisions use the original
    predictions, so demotions do not cascade.
    """
    samples = [np.asarray(getattr(s, "samples", s), dtype=float) for s in streams]
    if len(samples) != len(predictions):
        raise ValueError("predictions must align with streams")
    power = [float(np.var(s)) for s in samples]
    out = [bool(p) for p in predictions]
    for i, occupied in enumerate(predictions):
        if not occupied or power[i] == 0:
            continue
        best_rho, best_j = -np.inf, None
        for j in (i - 1, i + 1):
            if 0 <= j < len(samples) and predictions[j] and power[j] > 0:
                rho = float(np.corrcoef(samples[i], samples[j])[0, 1])
                if rho > best_rho:
                    best_rho, best_j = rho, j
        if best_j is not None and best_rho > threshold and power[best_j] > power[i]:
            out[i] = False
    return out
