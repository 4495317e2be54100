"""Moment features, 2D grid shaping and multi-pipeline fusion.

Two windowing modes are provided:

* scalar mode (:func:`frame_stream_features`): every frame is reduced to the
  mean of its elements and the resulting series is windowed.  This feeds the
  lightweight per-sensor telemetry.
* per-element mode (:func:`moment_maps`): moments are computed for every
  frame position over the window, giving mu/sigma/zeta/kappa maps.  These are
  arranged into the matrices that become 32x32 classifier inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import MdfError, PipelineId, RawFrame, SensorId, TooShort, MixedSensors

GRID = 32
DEFAULT_WINDOW = 32
DEGENERATE_SIGMA = 1e-12


class DegenerateWindow(MdfError):
    code = "DegenerateWindow"


class EmptyMatrix(MdfError):
    code = "EmptyMatrix"


class MissingPipeline(MdfError):
    code = "MissingPipeline"


@dataclass(frozen=True)
class FeatureVector:
    sensor: SensorId
    window_end: int
    mu: float
    sigma: float
    zeta: float
    kappa: float

    def to_json(self) -> dict:
        return {
            "pipeline": int(self.sensor.pipeline),
            "sensor": self.sensor.k,
            "t_ms": self.window_end,
            "mu": self.mu,
            "sigma": self.sigma,
            "zeta": self.zeta,
            "kappa": self.kappa,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FeatureVector":
        return cls(SensorId(PipelineId.parse(doc["pipeline"]), int(doc["sensor"])),
                   int(doc["t_ms"]), float(doc["mu"]), float(doc["sigma"]),
                   float(doc["zeta"]), float(doc["kappa"]))


@dataclass(frozen=True)
class FeatureGrid:
    channels: tuple  # ((PipelineId, 32x32 ndarray), ...) ascending pipeline
    window_end: int

    @property
    def pipelines(self) -> tuple:
        return tuple(p for p, _ in self.channels)

    def as_array(self) -> np.ndarray:
        """(n_channels, 32, 32) stack."""
        return np.stack([m for _, m in self.channels])

    def to_json(self) -> dict:
        return {
            "t_ms": self.window_end,
            "pipelines": [int(p) for p in self.pipelines],
            "channels": [m.tolist() for _, m in self.channels],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FeatureGrid":
        chans = tuple((PipelineId.parse(p), np.asarray(m, dtype=float))
                      for p, m in zip(doc["pipelines"], doc["channels"]))
        return cls(chans, int(doc["t_ms"]))


def compute_moments(window) -> tuple[float, float, float, float]:
    """Population mean, deviation, skewness and kurtosis of a window."""
    x = np.asarray(window, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise TooShort("moment window needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("window contains non-finite samples")
    mu = x.mean()
    d = x - mu
    sigma = np.sqrt(np.mean(d * d))
    if sigma < DEGENERATE_SIGMA:
        raise DegenerateWindow("zero-variance window: skewness/kurtosis undefined")
    z = d / sigma
    z2 = z * z
    return float(mu), float(sigma), float(np.mean(z2 * z)), float(np.mean(z2 * z2))


def moment_maps(stack: np.ndarray) -> np.ndarray:
    """Per-element moments over axis 0 of ``stack`` (time first).

    Returns an array of shape (4,) + stack.shape[1:] holding mu, sigma, zeta,
    kappa.  Positions with zero variance get zeta = kappa = 0 instead of
    raising, so one dead detector does not void a whole window.
    """
    x = np.asarray(stack, dtype=float)
    if x.shape[0] < 2:
        raise TooShort("moment window needs at least 2 samples")
    mu = x.mean(axis=0)
    d = x - mu
    var = np.mean(d * d, axis=0)
    sigma = np.sqrt(var)
    ok = sigma >= DEGENERATE_SIGMA
    safe = np.where(ok, sigma, 1.0)
    z = d / safe
    z2 = z * z
    zeta = np.where(ok, np.mean(z2 * z, axis=0), 0.0)
    kappa = np.where(ok, np.mean(z2 * z2, axis=0), 0.0)
    return np.stack([mu, sigma, zeta, kappa])


def frame_stream_features(frames: Sequence[RawFrame],
                          window_len: int = DEFAULT_WINDOW) -> list[FeatureVector]:
    """Scalar-mode features over consecutive non-overlapping windows.

    A trailing partial window is not emitted.  Raises DegenerateWindow on the
    first constant window; use :func:`iter_window_features` to keep going.
    """
    out = []
    for item in iter_window_features(frames, window_len):
        if isinstance(item, DegenerateWindow):
            raise item
        out.append(item)
    return out


def iter_window_features(frames: Sequence[RawFrame], window_len: int = DEFAULT_WINDOW):
    """Yield a FeatureVector, or the DegenerateWindow error, per window."""
    if window_len < 2:
        raise TooShort("window_len must be >= 2")
    if len(frames) < window_len:
        raise TooShort(f"need at least {window_len} frames, got {len(frames)}")
    if len({f.sensor for f in frames}) != 1:
        raise MixedSensors("frame_stream_features takes a single-sensor stream")
    summary = np.array([f.values.mean() for f in frames])
    for start in range(0, len(frames) - window_len + 1, window_len):
        end = start + window_len
        try:
            mu, sigma, zeta, kappa = compute_moments(summary[start:end])
        except DegenerateWindow as exc:
            exc.window_end = frames[end - 1].at
            yield exc
            continue
        yield FeatureVector(frames[0].sensor, frames[end - 1].at, mu, sigma, zeta, kappa)


def resize_grid(matrix, target: int = GRID) -> np.ndarray:
    """Bilinear resampling of an HxW matrix onto a target x target grid.

    Both grids are laid on the unit square with corners aligned, so corner
    values are kept and a 32x32 input passes through unchanged.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise EmptyMatrix(f"cannot resize matrix of shape {m.shape}")
    if m.shape == (target, target):
        return m.copy()
    h, w = m.shape

    def axis_weights(n):
        if n == 1:
            z = np.zeros(target, dtype=int)
            return z, z, np.zeros(target)
        pos = np.linspace(0.0, n - 1, target)
        lo = np.clip(np.floor(pos).astype(int), 0, n - 2)
        return lo, lo + 1, pos - lo

    r0, r1, fr = axis_weights(h)
    c0, c1, fc = axis_weights(w)
    top = m[r0][:, c0] * (1 - fc) + m[r0][:, c1] * fc
    bottom = m[r1][:, c0] * (1 - fc) + m[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bottom * fr[:, None]


def minmax_normalize(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


def fuse_features(per_pipeline: Mapping, selection, window_end: int = 0) -> FeatureGrid:
    """Resize, normalize and stack the selected pipelines' feature matrices."""
    sel = sorted({PipelineId.parse(p) for p in selection})
    if not sel:
        raise MissingPipeline("empty pipeline selection")
    lookup = {PipelineId.parse(k): v for k, v in per_pipeline.items()}
    channels = []
    for p in sel:
        if p not in lookup:
            raise MissingPipeline(f"no feature matrix for pipeline {int(p)}")
        channels.append((p, minmax_normalize(resize_grid(lookup[p]))))
    return FeatureGrid(tuple(channels), window_end)


def tile(maps: np.ndarray, cols: int) -> np.ndarray:
    """Arrange a stack of equal-size 2D maps into one mosaic, row-major."""
    maps = np.asarray(maps)
    n, h, w = maps.shape
    rows = -(-n // cols)
    out = np.zeros((rows * h, cols * w))
    for i in range(n):
        r, c = divmod(i, cols)
        out[r * h:(r + 1) * h, c * w:(c + 1) * w] = maps[i]
    return out


def decimate(matrix, axis: int, factor: int) -> np.ndarray:
    """Block-average ``factor`` neighbours along ``axis`` (the length must divide)."""
    m = np.asarray(matrix, dtype=float)
    if factor <= 1:
        return m
    n = m.shape[axis]
    if n % factor:
        raise ValueError(f"axis length {n} not divisible by {factor}")
    shape = list(m.shape)
    shape[axis:axis + 1] = [n // factor, factor]
    return m.reshape(shape).mean(axis=axis + 1)


def feature_matrix(pipeline, windows: Sequence[np.ndarray]) -> np.ndarray:
    """Build one pipeline's 2D feature matrix from its sensors' denoised windows.

    ``windows`` holds one (window_len, frame_len) array per sensor, ordered by
    sensor index.  Layout per pipeline:

    * radar: rows are (moment, radar) pairs, columns are range bins averaged
      in blocks of 16 -> 4M x 32 (a plain bilinear resize of 512 bins would
      skip over 2-bin wide body peaks)
    * THz: the four 32x32 moment maps tiled 2x2, then 2x2 block means -> 32 x 32
    * IR: per sensor the four 8x8 maps tiled 2x2, sensors side by side
    * CSI: rows are moments, columns are the 128 interleaved samples
    """
    p = PipelineId.parse(pipeline)
    maps = [moment_maps(w) for w in windows]
    if p == PipelineId.RADAR:
        full = np.concatenate([np.stack([mm[j] for mm in maps]) for j in range(4)])
        if full.shape[1] > GRID and full.shape[1] % GRID == 0:
            return decimate(full, 1, full.shape[1] // GRID)
        return full
    if p == PipelineId.THZ:
        return decimate(decimate(tile(maps[0].reshape(4, 32, 32), cols=2), 0, 2), 1, 2)
    if p == PipelineId.IR:
        return np.hstack([tile(mm.reshape(4, 8, 8), cols=2) for mm in maps])
    return np.vstack([mm for mm in maps])
