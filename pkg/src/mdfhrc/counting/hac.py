"""Hierarchical agglomerative clustering on a precomputed distance matrix."""
from __future__ import annotations

import numpy as np

from .dtw import DistanceMatrix

LINKAGES = ("single", "average", "complete")


def _linkage(d: np.ndarray, a: list[int], b: list[int], how: str) -> float:
    block = d[np.ix_(a, b)]
    if how == "single":
        return float(block.min())
    if how == "complete":
        return float(block.max())
    return float(block.mean())


def hac_cluster(dm: DistanceMatrix, linkage: str = "average", cut: float = 1.0):
    """Merge clusters while the closest pair is within ``cut``.

    Returns (labels, merges): labels[i] is the cluster of item i, numbered in
    order of each cluster's smallest member; merges lists (a, b, distance)
    with clusters named by their smallest member.  Ties go to the pair with
    the lowest (smallest-member) indices.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    d = dm.d if isinstance(dm, DistanceMatrix) else np.asarray(dm, dtype=float)
    clusters = [[i] for i in range(d.shape[0])]
    merges = []
    while len(clusters) > 1:
        best = None
        for x in range(len(clusters)):
            for y in range(x + 1, len(clusters)):
                dist = _linkage(d, clusters[x], clusters[y], linkage)
                if best is None or dist < best[0]:
                    best = (dist, x, y)
        dist, x, y = best
        if dist > cut:
            break
        merges.append((clusters[x][0], clusters[y][0], dist))
        clusters[x] = sorted(clusters[x] + clusters[y])
        del clusters[y]
    clusters.sort(key=lambda c: c[0])
    labels = np.empty(d.shape[0], dtype=int)
    for c, members in enumerate(clusters):
        labels[members] = c
    return labels, merges
