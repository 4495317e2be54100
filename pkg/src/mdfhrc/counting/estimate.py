"""Training-free worker counting from one CSI session."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..core import CSI_ANTENNAS, CSI_SUBCARRIERS, TooShort
from .beams import beam_power, frames_to_array, orthogonal_angles
from .dtw import build_distance_matrix
from .hac import hac_cluster
from .jade import jade_separate
from .kl import false_positive_filter, neighbor_divergences


@dataclass
class CountingConfig:
    angles: tuple = tuple(float(a) for a in orthogonal_angles())
    min_frames: int = 100
    # a stream is active when S * var(P) / mean(P)^2 exceeds this; pure noise
    # gives ~1 because the power of complex Gaussian noise averaged over S
    # subcarriers has var/mean^2 = 1/S
    gate: float = 3.0
    # neighbour-correlation demotion inside the counting chain; lower than the
    # filter's own default because sidelobe leakage of a worker 2 deg off a
    # beam centre already reaches rho ~ 0.8
    fp_threshold: float = 0.7
    rank_tol: float = 1e-8
    window_frac: float = 0.1
    linkage: str = "average"
    # cDDTW distance normalized by the two series' own derivative energy; JADE
    # outputs are decorrelated, so only near-duplicate sources should merge
    cut: float = 0.05
    # share of the active streams' variance a cluster must explain
    occupancy: float = 0.08
    kl_bins: int = 20
    max_count: int = CSI_ANTENNAS

    def to_json(self) -> dict:
        d = asdict(self)
        d["angles"] = list(self.angles)
        return d


@dataclass
class CountReport:
    estimated_count: int
    active_streams: list
    gate_stats: list
    kl: list
    clusters: list = field(default_factory=list)
    activity: list = field(default_factory=list)
    jade_flagged: bool = False
    demoted: list = field(default_factory=list)
    true_count: int | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items()}


def remove_static(x: np.ndarray) -> np.ndarray:
    """Subtract the per-antenna, per-subcarrier session mean (the LOS path)."""
    return x - x.mean(axis=0, keepdims=True)


def gate_statistic(power: np.ndarray, subcarriers: int = CSI_SUBCARRIERS) -> np.ndarray:
    mean = power.mean(axis=1)
    var = power.var(axis=1)
    return subcarriers * var / np.maximum(mean ** 2, np.finfo(float).tiny)


def _standardize(s: np.ndarray) -> np.ndarray:
    sd = s.std()
    return (s - s.mean()) / sd if sd > 0 else s - s.mean()


def estimate_count(session, config: CountingConfig | None = None) -> CountReport:
    """Count workers in a CSI session (frames or a (T, M, S) complex array)."""
    cfg = config or CountingConfig()
    x = session if isinstance(session, np.ndarray) else frames_to_array(session)
    if x.shape[0] < cfg.min_frames:
        raise TooShort(f"session has {x.shape[0]} frames, need {cfg.min_frames}")
    power = beam_power(remove_static(x), cfg.angles)
    stats = gate_statistic(power, x.shape[2])
    kl = neighbor_divergences(power, cfg.kl_bins).tolist() if len(power) > 1 else []
    gated = [bool(g > cfg.gate) for g in stats]
    kept = false_positive_filter(power, gated, cfg.fp_threshold)
    active = [i for i, k in enumerate(kept) if k]
    report = CountReport(0, active, stats.tolist(), kl)
    report.demoted = [i for i in range(len(gated)) if gated[i] and not kept[i]]
    if not active:
        return report

    streams = power[active]
    # noiseless scenes can leave fewer independent directions than active streams
    ev = np.linalg.eigvalsh(np.cov(streams).reshape(len(active), len(active)))
    rank = max(1, int(np.sum(ev > cfg.rank_tol * ev.max())))
    res = jade_separate(streams, min(len(active), rank))
    report.jade_flagged = res.flagged
    total = float(np.sum(streams.var(axis=1)))
    activity = np.sum(res.mixing ** 2, axis=0) / total
    report.activity = activity.tolist()

    if res.sources.shape[0] == 1:
        labels = np.array([0])
    else:
        srcs = [_standardize(s) for s in res.sources]
        dm = build_distance_matrix(srcs, cfg.window_frac)
        energy = np.array([np.sum(np.diff(s) ** 2) for s in srcs])
        norm = energy[:, None] + energy[None, :]
        rel = np.divide(dm.d, norm, out=np.zeros_like(dm.d), where=norm > 0)
        labels, _ = hac_cluster(rel, cfg.linkage, cfg.cut)
    report.clusters = labels.tolist()
    agg = np.bincount(labels, weights=activity)
    report.estimated_count = int(min(cfg.max_count, np.sum(agg > cfg.occupancy)))
    return report
