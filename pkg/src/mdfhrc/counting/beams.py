"""Beam scanning of CSI frames with a half-wavelength uniform linear array."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import CSI_ANTENNAS, DimensionMismatch, PipelineId, RawFrame, unpack_csi


@dataclass(frozen=True)
class SpatialStream:
    steering_angle: float  # radians
    samples: np.ndarray    # beamformed power per frame

    def __post_init__(self):
        if not -np.pi / 2 < self.steering_angle < np.pi / 2:
            raise ValueError("steering angle must lie in (-pi/2, pi/2)")


def steering_vector(theta: float, m: int = CSI_ANTENNAS) -> np.ndarray:
    """Unit-norm array response exp(j*pi*k*sin(theta)) / sqrt(M), k = 0..M-1."""
    k = np.arange(m)
    return np.exp(1j * np.pi * k * np.sin(theta)) / np.sqrt(m)


def scan_weights(theta: float, m: int = CSI_ANTENNAS) -> np.ndarray:
    """Weights w_k(theta) = exp(-j*pi*k*sin(theta)) / sqrt(M), applied as w . X."""
    return steering_vector(theta, m).conj()


def orthogonal_angles(m: int = CSI_ANTENNAS) -> np.ndarray:
    """The M mutually orthogonal beam directions, sin(theta) = (2i - M + 1) / M."""
    return np.arcsin((2 * np.arange(m) - m + 1) / m)


def frames_to_array(frames: Sequence[RawFrame]) -> np.ndarray:
    """(T, antennas, subcarriers) complex array from CSI frames."""
    for f in frames:
        if f.pipeline != PipelineId.CSI:
            raise DimensionMismatch("beam scanning needs pipeline 4 frames")
    return unpack_csi(np.stack([f.values for f in frames]))


def beam_power(x: np.ndarray, angles: Sequence[float]) -> np.ndarray:
    """|w(theta) . X(t)|^2 averaged over subcarriers; shape (n_angles, T)."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != CSI_ANTENNAS:
        raise DimensionMismatch(f"expected (T, {CSI_ANTENNAS}, S) CSI array, got {x.shape}")
    w = np.stack([scan_weights(a, x.shape[1]) for a in angles])  # (A, M)
    y = np.einsum("am,tms->ats", w, x)
    return np.mean(np.abs(y) ** 2, axis=2)


def beam_scan(frames, angles: Sequence[float]) -> list[SpatialStream]:
    if len(angles) < 1:
        raise ValueError("need at least one scan angle")
    x = frames if isinstance(frames, np.ndarray) else frames_to_array(frames)
    power = beam_power(x, angles)
    return [SpatialStream(float(a), p) for a, p in zip(angles, power)]
