"""Shared domain types for the four sensing pipelines.

Pipelines are fixed: 1 = FMCW radar, 2 = sub-THz camera, 3 = IR thermopile
array, 4 = multi-antenna CSI receiver.  Every raw or denoised frame is a flat
float vector whose length depends only on the pipeline.  CSI samples are
stored interleaved (re, im) in antenna-major order so all pipelines share
one frame type.

Scenario time is integer milliseconds since scenario start.  Wall-clock time
only shows up in transport envelopes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MdfError(Exception):
    """Base class for all errors raised by this package."""

    code = "MdfError"


class EmptyInput(MdfError):
    code = "EmptyInput"


class MixedSensors(MdfError):
    code = "MixedSensors"


class DimensionMismatch(MdfError):
    code = "DimensionMismatch"


class TooShort(MdfError):
    code = "TooShort"


class NonMonotoneTime(MdfError):
    code = "NonMonotoneTime"


N_FFT = 512
N_THZ = 1024
N_TP = 64
CSI_ANTENNAS = 4
CSI_SUBCARRIERS = 16


class PipelineId(enum.IntEnum):
    RADAR = 1
    THZ = 2
    IR = 3
    CSI = 4

    @classmethod
    def parse(cls, value) -> "PipelineId":
        try:
            return cls(int(value))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"not a pipeline id: {value!r}") from exc

    @property
    def frame_len(self) -> int:
        return FRAME_LEN[self]

    @property
    def max_sensors(self) -> int:
        return MAX_SENSORS[self]


FRAME_LEN = {
    PipelineId.RADAR: N_FFT,
    PipelineId.THZ: N_THZ,
    PipelineId.IR: N_TP,
    PipelineId.CSI: 2 * CSI_ANTENNAS * CSI_SUBCARRIERS,
}

# sensor counts of the pilot deployment.  The THz camera (1024 detectors) and
# the CSI receiver (4 antennas) deliver all their elements in one frame, which
# is stamped with k=1.
MAX_SENSORS = {
    PipelineId.RADAR: 6,
    PipelineId.THZ: N_THZ,
    PipelineId.IR: 3,
    PipelineId.CSI: CSI_ANTENNAS,
}


@dataclass(frozen=True, order=True)
class SensorId:
    pipeline: PipelineId
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pipeline", PipelineId.parse(self.pipeline))
        if not 1 <= self.k <= self.pipeline.max_sensors:
            raise ValueError(
                f"sensor index {self.k} outside 1..{self.pipeline.max_sensors} "
                f"for pipeline {int(self.pipeline)}"
            )

    def __str__(self):
        return f"{int(self.pipeline)}/{self.k}"


@dataclass(frozen=True)
class RawFrame:
    sensor: SensorId
    at: int
    values: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.shape[0] != self.sensor.pipeline.frame_len:
            raise DimensionMismatch(
                f"pipeline {int(self.sensor.pipeline)} frames have length "
                f"{self.sensor.pipeline.frame_len}, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("frame values must be finite")
        if self.at < 0:
            raise ValueError("timestamp must be non-negative")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def pipeline(self) -> PipelineId:
        return self.sensor.pipeline

    def complex_samples(self) -> np.ndarray:
        """CSI view: (antennas, subcarriers) complex array."""
        if self.pipeline != PipelineId.CSI:
            raise DimensionMismatch("complex view only exists for CSI frames")
        return unpack_csi(self.values)


class DenoisedFrame(RawFrame):
    """Same layout as the raw frame it was computed from."""


def pack_csi(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=complex)
    if samples.shape != (CSI_ANTENNAS, CSI_SUBCARRIERS):
        raise DimensionMismatch(f"CSI block must be {CSI_ANTENNAS}x{CSI_SUBCARRIERS}")
    out = np.empty(2 * samples.size)
    out[0::2] = samples.real.ravel()
    out[1::2] = samples.imag.ravel()
    return out


def unpack_csi(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    z = values[..., 0::2] + 1j * values[..., 1::2]
    return z.reshape(values.shape[:-1] + (CSI_ANTENNAS, CSI_SUBCARRIERS))


def check_stream(frames: Sequence[RawFrame]) -> None:
    """Reject streams whose per-sensor timestamps go backwards."""
    last: dict[SensorId, int] = {}
    for f in frames:
        prev = last.get(f.sensor)
        if prev is not None and f.at < prev:
            raise NonMonotoneTime(f"sensor {f.sensor}: t={f.at} after t={prev}")
        last[f.sensor] = f.at


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic stream backed by numpy's PCG64 (PCG XSL RR 128/64).

    PCG64 output for a given integer seed is fixed across numpy releases and
    platforms, so identical seeds reproduce identical draws.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))
