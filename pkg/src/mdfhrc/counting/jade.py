"""JADE blind source separation for real-valued signals.

Whitening, fourth-order cumulant matrices of the whitened data, then joint
approximate diagonalization of those matrices by Jacobi (Givens) rotations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MdfError


class RankDeficient(MdfError):
    code = "RankDeficient"


class NonConvergence(MdfError):
    code = "NonConvergence"

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class JadeResult:
    sources: np.ndarray     # (n_sources, T), unit variance
    unmixing: np.ndarray    # (n_sources, n_streams); sources = unmixing @ (X - mean)
    mixing: np.ndarray      # (n_streams, n_sources), pseudo-inverse of unmixing
    sweeps: int
    converged: bool
    residual: float         # off-diagonal mass / total mass after the last sweep
    gaussian_like: bool     # separation not identifiable (>= 2 near-Gaussian outputs)

    @property
    def flagged(self) -> bool:
        return (not self.converged) or self.gaussian_like


def _cumulant_matrices(z: np.ndarray) -> np.ndarray:
    """m(m+1)/2 symmetric cumulant slices of whitened data, stacked (m, m*nbcm)."""
    m, t = z.shape
    mats = []
    eye = np.eye(m)
    for i in range(m):
        zi = z[i]
        q = ((zi * zi * z) @ z.T) / t - eye
        q[i, i] -= 2.0
        mats.append(q)
        for j in range(i):
            zj = z[j]
            q = ((zi * zj * z) @ z.T) / t
            q[i, j] -= 1.0
            q[j, i] -= 1.0
            mats.append(np.sqrt(2.0) * q)
    return np.hstack(mats)


def _off_mass(cm: np.ndarray, m: int) -> tuple[float, float]:
    blocks = cm.reshape(m, -1, m).transpose(1, 0, 2)
    total = float(np.sum(blocks ** 2))
    diag = float(np.sum(np.einsum("kii->ki", blocks) ** 2))
    return total - diag, total


def jade_separate(streams, n_sources: int | None = None, *, max_sweeps: int = 100,
                  tol: float = 1e-9, strict: bool = False) -> JadeResult:
    x = np.asarray(streams, dtype=float)
    if x.ndim != 2:
        raise ValueError("streams must be a (n_streams, T) matrix")
    n, t = x.shape
    m = n if n_sources is None else int(n_sources)
    if not 1 <= m <= n:
        raise ValueError(f"n_sources must lie in 1..{n}")
    if t < 10 * n:
        raise ValueError(f"need at least {10 * n} samples for {n} streams, got {t}")
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean

    vals, vecs = np.linalg.eigh(xc @ xc.T / t)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    scale = max(vals[0], np.finfo(float).tiny)
    if vals[m - 1] <= 1e-10 * scale:
        raise RankDeficient(
            f"covariance has rank {int(np.sum(vals > 1e-10 * scale))} < {m} sources")
    whitener = vecs[:, :m].T / np.sqrt(vals[:m])[:, None]
    z = whitener @ xc

    cm = _cumulant_matrices(z)
    nbcm = cm.shape[1] // m
    v = np.eye(m)
    seuil = 1e-6 / np.sqrt(t)
    off, total = _off_mass(cm, m)
    sweeps = 0
    converged = m == 1
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(m - 1):
            for q in range(p + 1, m):
                ip = np.arange(p, m * nbcm, m)
                iq = np.arange(q, m * nbcm, m)
                g = np.vstack([cm[p, ip] - cm[q, iq], cm[p, iq] + cm[q, ip]])
                gg = g @ g.T
                ton = gg[0, 0] - gg[1, 1]
                toff = gg[0, 1] + gg[1, 0]
                theta = 0.5 * np.arctan2(toff, ton + np.sqrt(ton * ton + toff * toff))
                if abs(theta) > seuil:
                    rotated = True
                    c, s = np.cos(theta), np.sin(theta)
                    g2 = np.array([[c, -s], [s, c]])
                    pair = [p, q]
                    v[:, pair] = v[:, pair] @ g2
                    cm[pair, :] = g2.T @ cm[pair, :]
                    cols = np.concatenate([ip, iq])
                    cm[:, cols] = np.hstack([c * cm[:, ip] + s * cm[:, iq],
                                             -s * cm[:, ip] + c * cm[:, iq]])
        new_off, total = _off_mass(cm, m)
        if not rotated or abs(off - new_off) < tol * max(total, 1.0):
            converged = True
        off = new_off

    residual = off / total if total > 0 else 0.0
    unmix = v.T @ whitener
    sources = unmix @ xc
    # order by decreasing energy of the mixing columns, fix the sign to make
    # the source skewness non-negative
    mixing = np.linalg.pinv(unmix)
    order = np.argsort(-np.sum(mixing ** 2, axis=0), kind="stable")
    unmix, sources, mixing = unmix[order], sources[order], mixing[:, order]
    skew = np.mean(sources ** 3, axis=1)
    signs = np.where(skew < 0, -1.0, 1.0)
    unmix *= signs[:, None]
    sources *= signs[:, None]
    mixing *= signs[None, :]

    excess = np.mean(sources ** 4, axis=1) - 3.0
    gaussian_like = m >= 2 and int(np.sum(np.abs(excess) < 3 * np.sqrt(24.0 / t))) >= 2
    if strict and not converged:
        raise NonConvergence(f"JADE did not converge in {max_sweeps} sweeps", residual)
    return JadeResult(sources, unmix, mixing, sweeps, converged, residual, gaussian_like)
