"""Per-pipeline background estimation and frame denoising.

All estimators use population (divide-by-N) statistics.  Backgrounds are
fitted once on recordings of the empty cell and then shared read-only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import (
    CSI_ANTENNAS,
    CSI_SUBCARRIERS,
    N_TP,
    DenoisedFrame,
    DimensionMismatch,
    EmptyInput,
    MixedSensors,
    PipelineId,
    RawFrame,
    SensorId,
    pack_csi,
    unpack_csi,
)

THZ_SIGMA_FLOOR = 1e-9


@dataclass(frozen=True)
class RadarBackground:
    sensor: SensorId
    mean: np.ndarray
    covariance: np.ndarray
    eigen_floor: float
    # cached C^{-1/2}
    whitener: np.ndarray

    kind = "radar"

    @classmethod
    def from_moments(cls, sensor, mean, covariance, eigen_floor=None):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(covariance, dtype=float)
        cov = 0.5 * (cov + cov.T)
        if eigen_floor is None:
            eigen_floor = max(1e-9, 1e-9 * np.trace(cov) / cov.shape[0])
        return cls(sensor, mean, cov, float(eigen_floor),
                   inverse_sqrt(cov, eigen_floor))

    def params(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
                "eigen_floor": self.eigen_floor}


@dataclass(frozen=True)
class ThzBackground:
    sensor: SensorId
    b: np.ndarray
    sigma: np.ndarray

    kind = "thz"

    def params(self):
        return {"b": self.b.tolist(), "sigma": self.sigma.tolist()}


@dataclass(frozen=True)
class IrBackground:
    sensor: SensorId
    frame: np.ndarray

    kind = "ir"

    def params(self):
        return {"frame": self.frame.tolist()}


@dataclass(frozen=True)
class CsiCalibration:
    sensor: SensorId
    weights: np.ndarray
    los_estimate: np.ndarray

    kind = "csi"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex)
        if w.shape != (CSI_ANTENNAS,):
            raise DimensionMismatch(f"need {CSI_ANTENNAS} beamforming weights")
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError("beamforming weights are all zero")
        object.__setattr__(self, "weights", w / norm)
        los = np.asarray(self.los_estimate, dtype=complex)
        if los.shape != (CSI_SUBCARRIERS,):
            raise DimensionMismatch(f"LOS estimate must have {CSI_SUBCARRIERS} samples")
        object.__setattr__(self, "los_estimate", los)

    def params(self):
        return {
            "weights": [[z.real, z.imag] for z in self.weights],
            "los_estimate": [[z.real, z.imag] for z in self.los_estimate],
        }


BackgroundModel = Union[RadarBackground, ThzBackground, IrBackground, CsiCalibration]

_KIND_PIPELINE = {
    "radar": PipelineId.RADAR,
    "thz": PipelineId.THZ,
    "ir": PipelineId.IR,
    "csi": PipelineId.CSI,
}


def inverse_sqrt(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetric C^{-1/2} with eigenvalues clipped from below at ``floor``."""
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _stack(frames: Sequence[RawFrame], pipeline: PipelineId, minimum: int) -> tuple:
    if len(frames) < minimum:
        raise EmptyInput(f"need at least {minimum} frames, got {len(frames)}")
    sensors = {f.sensor for f in frames}
    if len(sensors) != 1:
        raise MixedSensors(f"frames come from {len(sensors)} sensors")
    sensor = sensors.pop()
    if sensor.pipeline != pipeline:
        raise DimensionMismatch(
            f"expected pipeline {int(pipeline)} frames, got {int(sensor.pipeline)}")
    return sensor, np.stack([f.values for f in frames])


def _check(frame: RawFrame, pipeline: PipelineId, bg_sensor: SensorId):
    if frame.pipeline != pipeline:
        raise DimensionMismatch(
            f"expected pipeline {int(pipeline)} frame, got {int(frame.pipeline)}")
    if bg_sensor.pipeline != pipeline:
        raise DimensionMismatch("background belongs to another pipeline")


def average_spectra(frames: Sequence[RawFrame], n: int = 8) -> list[RawFrame]:
    """Average consecutive radar spectra in non-overlapping groups of ``n``.

    A trailing partial group is dropped.  The output frame carries the
    sensor and timestamp of the last frame of its group.
    """
    if n < 1:
        raise ValueError("averaging window must be >= 1")
    out = []
    for start in range(0, len(frames) - n + 1, n):
        group = frames[start:start + n]
        if len({f.sensor for f in group}) != 1:
            raise MixedSensors("averaging group spans several sensors")
        vals = np.mean([f.values for f in group], axis=0)
        out.append(RawFrame(group[-1].sensor, group[-1].at, vals))
    return out


# -- pipeline 1: FMCW radar --------------------------------------------------

def estimate_radar_background(empty_frames: Sequence[RawFrame],
                              regularization: float = 0.0) -> RadarBackground:
    sensor, x = _stack(empty_frames, PipelineId.RADAR, 2)
    return fit_radar_background(x, regularization, sensor)


def fit_radar_background(x: np.ndarray, regularization: float = 0.0,
                         sensor: SensorId | None = None) -> RadarBackground:
    """Array form of :func:`estimate_radar_background` for any frame length.

    ``x`` has one frame per row.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EmptyInput("need at least 2 frames")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    cov += regularization * np.eye(x.shape[1])
    return RadarBackground.from_moments(sensor or SensorId(PipelineId.RADAR, 1), mean, cov)


def whiten(x: np.ndarray, bg: RadarBackground) -> np.ndarray:
    """C^{-1/2}(x - mean) for a single frame or a stack of frames (rows)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != bg.mean.shape[0]:
        raise DimensionMismatch(
            f"frame length {x.shape[-1]} != background length {bg.mean.shape[0]}")
    return (x - bg.mean) @ bg.whitener.T


def radar_denoise(frame: RawFrame, bg: RadarBackground) -> DenoisedFrame:
    _check(frame, PipelineId.RADAR, bg.sensor)
    return DenoisedFrame(frame.sensor, frame.at, whiten(frame.values, bg))


# -- pipeline 2: sub-THz camera -----------------------------------------------

def estimate_thz_background(empty_frames: Sequence[RawFrame]) -> ThzBackground:
    sensor, x = _stack(empty_frames, PipelineId.THZ, 2)
    return ThzBackground(sensor, x.mean(axis=0), x.std(axis=0))


def thz_normalize(x: np.ndarray, bg: ThzBackground) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != bg.b.shape[0]:
        raise DimensionMismatch("THz frame and background lengths differ")
    sigma = np.where(bg.sigma < THZ_SIGMA_FLOOR, THZ_SIGMA_FLOOR, bg.sigma)
    return (x - bg.b) / sigma


def thz_denoise(frame: RawFrame, bg: ThzBackground) -> DenoisedFrame:
    _check(frame, PipelineId.THZ, bg.sensor)
    return DenoisedFrame(frame.sensor, frame.at, thz_normalize(frame.values, bg))


# -- pipeline 3: IR thermopile arrays -------------------------------------------

def estimate_ir_background(empty_frames: Sequence[RawFrame]) -> IrBackground:
    sensor, x = _stack(empty_frames, PipelineId.IR, 1)
    return IrBackground(sensor, x.mean(axis=0))


def ir_denoise(frame: RawFrame, bg: IrBackground) -> DenoisedFrame:
    _check(frame, PipelineId.IR, bg.sensor)
    if bg.frame.shape != (N_TP,):
        raise DimensionMismatch(f"IR background must have {N_TP} pixels")
    return DenoisedFrame(frame.sensor, frame.at, frame.values - bg.frame)


# -- pipeline 4: CSI ---------------------------------------------------------

def beam_output(frame: RawFrame, weights: np.ndarray) -> np.ndarray:
    """Beamformer output w^H X(t): one complex sample per subcarrier."""
    w = np.asarray(weights, dtype=complex)
    if w.shape != (CSI_ANTENNAS,):
        raise DimensionMismatch(f"need {CSI_ANTENNAS} weights")
    return w.conj() @ frame.complex_samples()


def estimate_los(quiet_frames: Sequence[RawFrame], weights: np.ndarray) -> np.ndarray:
    if not quiet_frames:
        raise EmptyInput("LOS estimation needs at least one quiet frame")
    for f in quiet_frames:
        if f.pipeline != PipelineId.CSI:
            raise DimensionMismatch("LOS estimation needs CSI frames")
    w = np.asarray(weights, dtype=complex)
    w = w / np.linalg.norm(w)
    return np.mean([beam_output(f, w) for f in quiet_frames], axis=0)


def calibrate_csi(quiet_frames: Sequence[RawFrame], weights: np.ndarray) -> CsiCalibration:
    w = np.asarray(weights, dtype=complex)
    w = w / np.linalg.norm(w)
    return CsiCalibration(quiet_frames[0].sensor if quiet_frames else SensorId(4, 1),
                          w, estimate_los(quiet_frames, w))


def csi_isolate(frame: RawFrame, cal: CsiCalibration) -> DenoisedFrame:
    """Beamform, subtract the LOS estimate, and project back onto the array.

    The residual y(t) = w^H X(t) - L(t) is the target-reflected component seen
    by the beam.  To keep the frame layout of pipeline 4 the residual is
    returned as its per-antenna back-projection w_k * y(t); since ``w`` has unit
    norm, |y| is recovered as the antenna-wise L2 norm (see
    :func:`isolated_beam_signal`).
    """
    _check(frame, PipelineId.CSI, cal.sensor)
    y = beam_output(frame, cal.weights) - cal.los_estimate
    back = np.outer(cal.weights, y)
    return DenoisedFrame(frame.sensor, frame.at, pack_csi(back))


def isolated_beam_signal(denoised: RawFrame, cal: CsiCalibration) -> np.ndarray:
    """Recover y(t) from a frame produced by :func:`csi_isolate`."""
    back = unpack_csi(denoised.values)
    return cal.weights.conj() @ back


# -- persistence ---------------------------------------------------------------

def background_to_json(bg: BackgroundModel) -> str:
    doc = {
        "pipeline": int(bg.sensor.pipeline),
        "sensor": bg.sensor.k,
        "kind": bg.kind,
        "params": bg.params(),
    }
    return json.dumps(doc)


def background_from_json(text: str) -> BackgroundModel:
    doc = json.loads(text)
    kind = doc["kind"]
    if kind not in _KIND_PIPELINE:
        raise ValueError(f"unknown background kind {kind!r}")
    sensor = SensorId(PipelineId.parse(doc["pipeline"]), int(doc["sensor"]))
    if sensor.pipeline != _KIND_PIPELINE[kind]:
        raise ValueError(f"background kind {kind} does not match pipeline {doc['pipeline']}")
    p = doc["params"]
    if kind == "radar":
        return RadarBackground.from_moments(sensor, p["mean"], p["covariance"], p["eigen_floor"])
    if kind == "thz":
        return ThzBackground(sensor, np.asarray(p["b"], float), np.asarray(p["sigma"], float))
    if kind == "ir":
        return IrBackground(sensor, np.asarray(p["frame"], float))

    def cplx(pairs):
        return np.array([complex(re, im) for re, im in pairs])

    return CsiCalibration(sensor, cplx(p["weights"]), cplx(p["los_estimate"]))
