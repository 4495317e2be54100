"""Parametric signal models for the four pipelines.

Every generator is a pure function of (scenario, seed, t): random draws for
a frame come from a generator keyed on (seed, session, pipeline, sensor, t),
and worker micro-motion is a seeded sum of sinusoids rather than a
path-dependent walk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import (
    CSI_ANTENNAS,
    CSI_SUBCARRIERS,
    N_FFT,
    MdfError,
    PipelineId,
    RawFrame,
    SensorId,
    pack_csi,
)
from .scenario import EMPTY, Scenario

C = 299_792_458.0
BANDWIDTH = 6e9
RANGE_RES = 0.025  # m per FFT bin; c / 2B rounded as in the radar datasheet
MAX_RANGE = N_FFT * RANGE_RES
SUBFRAMES = 8
# the arm is a weak radar scatterer next to the torso
RADAR_ARM_GAIN = 0.05

RADAR_NOISE = 0.05
THZ_NOISE = 0.02
IR_NETD = 0.08

MAIN_SESSION = 1
CALIBRATION_SESSION = 0


class OutOfRange(MdfError):
    code = "OutOfRange"


def sub_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


# -- worker kinematics ---------------------------------------------------------------

@dataclass
class WorkerState:
    label: np.ndarray      # (T,) object array of labels
    xy: np.ndarray         # (T, 2), NaN while absent
    arm: np.ndarray        # (T,) arm-motion level in [0, 1]; 0 for "A"-type postures

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.xy[:, 0])


def _wobble(rng, t_s, sigma, n=4):
    freqs = rng.uniform(0.05, 0.5, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    amp = sigma * np.sqrt(2.0 / n)
    s = np.sum(amp * np.sin(2 * np.pi * freqs[:, None] * t_s[None, :] + phases[:, None]), axis=0)
    return np.clip(s, -3 * sigma, 3 * sigma)


def worker_states(scn: Scenario, times, session: int = MAIN_SESSION) -> list[WorkerState]:
    times = np.asarray(times, dtype=np.int64)
    t_s = times / 1000.0
    out = []
    for w in range(len(scn.tracks)):
        labels = np.array([scn.label_at(w, int(t)) for t in times], dtype=object)
        seg = np.array([scn.segment_index(w, int(t)) for t in times])
        xy = np.full((times.size, 2), np.nan)
        arm = np.zeros(times.size)
        for s in np.unique(seg):
            idx = seg == s
            lab = labels[idx][0]
            if lab == EMPTY:
                continue
            rng = sub_rng(scn.seed, session, 100, w, s)
            x0, y0 = scn.landmarks[lab]
            xy[idx, 0] = x0 + _wobble(rng, t_s[idx], scn.walk_sigma)
            xy[idx, 1] = y0 + _wobble(rng, t_s[idx], scn.walk_sigma)
            if lab.endswith("B"):
                f = rng.uniform(0.6, 1.0)
                ph = rng.uniform(0, 2 * np.pi)
                jitter = rng.uniform(0.0, 0.3, idx.sum())
                arm[idx] = np.clip(0.5 + 0.4 * np.sin(2 * np.pi * f * t_s[idx] + ph) + jitter
                                   - 0.15, 0, 1)
        out.append(WorkerState(labels, xy, arm))
    return out


def true_distance(scn: Scenario, states: list[WorkerState]) -> np.ndarray:
    """Closest worker-robot distance per time step (NaN when nobody is present)."""
    rx, ry = scn.robot
    d = np.full(states[0].xy.shape[0] if states else 0, np.nan)
    for st in states:
        dist = np.hypot(st.xy[:, 0] - rx, st.xy[:, 1] - ry)
        d = np.fmin(d, dist)
    return d


# -- pipeline 1: FMCW radar ------------------------------------------------------

def radar_background_profile(scn: Scenario, k: int) -> np.ndarray:
    bins = np.arange(N_FFT)
    rng = sub_rng(scn.seed, 7, 1, k)
    prof = 1.0 + 3.0 * np.exp(-bins / 60.0)
    # static clutter: a few wall/fixture returns
    for _ in range(3):
        c = rng.uniform(60, 300)
        prof += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((bins - c) / 2.5) ** 2)
    return prof


def _peak(bins, center, amp, width=2.0):
    return amp[:, None] * np.exp(-0.5 * ((bins[None, :] - center[:, None]) / width) ** 2)


def radar_spectra(scn: Scenario, k: int, times, states=None,
                  session: int = MAIN_SESSION) -> np.ndarray:
    """(T, 512) averaged magnitude spectra for radar ``k`` (1-based)."""
    times = np.asarray(times, dtype=np.int64)
    if states is None:
        states = worker_states(scn, times, session)
    px, py = scn.radars[k - 1]
    bins = np.arange(N_FFT, dtype=float)
    t_s = times / 1000.0
    spec = np.tile(radar_background_profile(scn, k), (times.size, 1))

    # the robot keeps moving in the empty cell too
    r_robot = np.hypot(scn.robot[0] - px, scn.robot[1] - py)
    robot_amp = 2.0 * (1 + 0.3 * np.sin(2 * np.pi * t_s / 4.0))
    robot_rng = r_robot / RANGE_RES + 1.5 * np.sin(2 * np.pi * t_s / 4.0 + 1.0)
    spec += _peak(bins, robot_rng, robot_amp, 3.0)

    for st in states:
        on = st.present
        if not on.any():
            continue
        r = np.hypot(st.xy[on, 0] - px, st.xy[on, 1] - py)
        if np.any(r >= MAX_RANGE):
            raise OutOfRange(f"target at {r.max():.2f} m beyond {MAX_RANGE} m")
        amp = 3.0 / (1.0 + r)
        spec[on] += _peak(bins, r / RANGE_RES, amp)
        arm = st.arm[on]
        if np.any(arm > 0):
            r_arm = np.maximum(r - 0.3, 0.05)
            spec[on] += _peak(bins, r_arm / RANGE_RES, RADAR_ARM_GAIN * amp * arm, 1.5)

    sigma = RADAR_NOISE * scn.noise.get("radar", 1.0)
    if sigma > 0:
        for i, t in enumerate(times):
            rng = sub_rng(scn.seed, session, 1, k, int(t))
            # mean of SUBFRAMES i.i.d. noisy sub-frames
            spec[i] += rng.normal(0.0, sigma / np.sqrt(SUBFRAMES), N_FFT)
    return np.abs(spec)


def sim_radar_frame(scn: Scenario, sensor: SensorId, t: int,
                    session: int = MAIN_SESSION) -> RawFrame:
    if sensor.pipeline != PipelineId.RADAR:
        raise ValueError("sim_radar_frame needs a pipeline-1 sensor")
    return RawFrame(sensor, int(t), radar_spectra(scn, sensor.k, [t], session=session)[0])


# -- pipeline 2: sub-THz camera ------------------------------------------------------

ARM_REACH = 0.35  # m
_rows, _cols = np.mgrid[0:32, 0:32].astype(float)


def thz_background(scn: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Per-detector mean intensity b_k and deviation sigma_k (flattened 32x32)."""
    b = 0.45 + 0.4 * np.exp(-((_rows - 15.5) ** 2 + (_cols - 15.5) ** 2) / (2 * 11.0 ** 2))
    rng = sub_rng(scn.seed, 7, 2)
    b = b + rng.normal(0, 0.01, b.shape)
    sigma = THZ_NOISE * scn.noise.get("thz", 1.0) * (0.8 + 0.4 * rng.random(b.shape))
    return np.clip(b, 0, 1).ravel(), sigma.ravel()


def thz_frames(scn: Scenario, times, states=None, session: int = MAIN_SESSION) -> np.ndarray:
    times = np.asarray(times, dtype=np.int64)
    if states is None:
        states = worker_states(scn, times, session)
    b, sigma = thz_background(scn)
    att = np.zeros((times.size, 32, 32))
    for st in states:
        for i in np.flatnonzero(st.present):
            x, y = st.xy[i]
            lateral = y - scn.thz_los_y
            depth = 0.6 * np.exp(-lateral ** 2 / (2 * 0.45 ** 2))
            if depth < 1e-4:
                continue
            dist = max(scn.thz_camera_x - x, 0.2)
            c0 = 15.5 + 20.0 * lateral
            width = 2.0 + 6.0 / (dist + 0.5)
            # shadow position along the path shifts the blob vertically
            r0 = 8.0 + 16.0 * (x - scn.thz_source_x) / (scn.thz_camera_x - scn.thz_source_x)
            blob = np.exp(-0.5 * (((_cols - c0) / width) ** 2 + ((_rows - r0) / (1.6 * width)) ** 2))
            att[i] += depth * blob
            if st.arm[i] > 0:
                # the working arm reaches up to ARM_REACH towards the beam
                arm_lat = lateral - np.sign(lateral) * min(abs(lateral), ARM_REACH)
                arm_depth = 0.6 * np.exp(-arm_lat ** 2 / (2 * 0.45 ** 2))
                arm_blob = np.exp(-0.5 * (((_cols - 15.5 - 20.0 * arm_lat) / 2.0) ** 2
                                          + ((_rows - r0 + width) / 2.0) ** 2))
                att[i] += arm_depth * st.arm[i] * arm_blob
    att = np.clip(att, 0, 0.95).reshape(times.size, -1)
    frames = b[None, :] * (1 - att)
    if np.any(sigma > 0):
        for i, t in enumerate(times):
            rng = sub_rng(scn.seed, session, 2, 1, int(t))
            frames[i] += rng.normal(0.0, 1.0, frames.shape[1]) * sigma
    return frames


def sim_thz_frame(scn: Scenario, t: int, session: int = MAIN_SESSION) -> RawFrame:
    return RawFrame(SensorId(PipelineId.THZ, 1), int(t), thz_frames(scn, [t], session=session)[0])


# -- pipeline 3: IR thermopile arrays ------------------------------------------------

def _ir_grid(view):
    (x0, x1), (y0, y1) = view
    xs = x0 + (np.arange(8) + 0.5) * (x1 - x0) / 8
    ys = y0 + (np.arange(8) + 0.5) * (y1 - y0) / 8
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def ir_background(scn: Scenario, k: int) -> np.ndarray:
    gx, gy = _ir_grid(scn.ir_views[k - 1])
    bg = 22.0 + 0.3 * (gx / scn.room[0]) + 0.2 * (gy / scn.room[1])
    rx, ry = scn.robot
    bg += 4.0 * np.exp(-((gx - rx) ** 2 + (gy - ry) ** 2) / (2 * 0.3 ** 2))
    return bg


def ir_frames(scn: Scenario, k: int, times, states=None, session: int = MAIN_SESSION) -> np.ndarray:
    times = np.asarray(times, dtype=np.int64)
    if states is None:
        states = worker_states(scn, times, session)
    gx, gy = _ir_grid(scn.ir_views[k - 1])
    frames = np.tile(ir_background(scn, k), (times.size, 1))
    for st in states:
        on = st.present
        if not on.any():
            continue
        dx = gx[None, :] - st.xy[on, 0][:, None]
        dy = gy[None, :] - st.xy[on, 1][:, None]
        frames[on] += 3.0 * np.exp(-(dx ** 2 + dy ** 2) / (2 * 0.25 ** 2))
    sigma = IR_NETD * scn.noise.get("ir", 1.0)
    if sigma > 0:
        for i, t in enumerate(times):
            rng = sub_rng(scn.seed, session, 3, k, int(t))
            frames[i] += rng.normal(0.0, sigma, frames.shape[1])
    return frames


def sim_ir_frame(scn: Scenario, sensor: SensorId, t: int, session: int = MAIN_SESSION) -> RawFrame:
    if sensor.pipeline != PipelineId.IR:
        raise ValueError("sim_ir_frame needs a pipeline-3 sensor")
    return RawFrame(sensor, int(t), ir_frames(scn, sensor.k, [t], session=session)[0])


# -- pipeline 4: CSI ------------------------------------------------------------

@dataclass
class Reflector:
    angle: float          # radians
    amplitude: float
    freqs: tuple = (0.3, 0.9)
    phases: tuple = (0.0, 0.0)

    def envelope(self, t_s: np.ndarray) -> np.ndarray:
        """Non-negative, non-Gaussian (arcsine-like) body modulation g(t)."""
        f1, f2 = self.freqs
        p1, p2 = self.phases
        return self.amplitude * (1 + 0.6 * np.sin(2 * np.pi * f1 * t_s + p1)
                                 + 0.3 * np.sin(2 * np.pi * f2 * t_s + p2))


@dataclass
class CsiScene:
    los: np.ndarray = field(default_factory=lambda: 3.0 * np.ones(CSI_ANTENNAS, complex))
    reflectors: list = field(default_factory=list)
    noise_sigma: float = 0.1
    seed: int = 1

    def __post_init__(self):
        self.los = np.asarray(self.los, dtype=complex)
        if any(r.amplitude < 0 for r in self.reflectors):
            raise ValueError("reflector amplitudes must be non-negative")


def csi_samples(scene: CsiScene, times, session: int = MAIN_SESSION) -> np.ndarray:
    """(T, antennas, subcarriers) complex CSI following X = L + i + n."""
    times = np.asarray(times, dtype=np.int64)
    t_s = times / 1000.0
    k = np.arange(CSI_ANTENNAS)
    x = np.tile(scene.los[None, :, None], (times.size, 1, CSI_SUBCARRIERS)).astype(complex)
    for r_idx, refl in enumerate(scene.reflectors):
        steer = np.exp(1j * np.pi * k * np.sin(refl.angle))
        g = refl.envelope(t_s)
        for i, t in enumerate(times):
            rng = sub_rng(scene.seed, session, 4, 50 + r_idx, int(t))
            phase = np.exp(1j * rng.uniform(0, 2 * np.pi, CSI_SUBCARRIERS))
            x[i] += g[i] * steer[:, None] * phase[None, :]
    if scene.noise_sigma > 0:
        for i, t in enumerate(times):
            rng = sub_rng(scene.seed, session, 4, 1, int(t))
            n = rng.normal(size=(2, CSI_ANTENNAS, CSI_SUBCARRIERS))
            x[i] += scene.noise_sigma / np.sqrt(2) * (n[0] + 1j * n[1])
    return x


def sim_csi_frame(scene: CsiScene, t: int, session: int = MAIN_SESSION) -> RawFrame:
    return RawFrame(SensorId(PipelineId.CSI, 1), int(t), pack_csi(csi_samples(scene, [t], session)[0]))


def counting_scene(n_workers: int, seed: int, noise_sigma: float = 0.1,
                   jitter_deg: float = 2.0, angles=None) -> CsiScene:
    """Scene with workers at distinct orthogonal-beam directions (plus jitter)."""
    from ..counting.beams import orthogonal_angles

    rng = sub_rng(seed, 9, n_workers)
    grid = orthogonal_angles() if angles is None else np.asarray(angles)
    if n_workers > grid.size:
        raise ValueError(f"at most {grid.size} well-separated workers")
    chosen = np.sort(rng.choice(grid.size, n_workers, replace=False))
    refl = []
    for c in chosen:
        ang = grid[c] + np.deg2rad(rng.uniform(-jitter_deg, jitter_deg))
        refl.append(Reflector(float(ang), float(rng.uniform(0.8, 1.2)),
                              tuple(rng.uniform(0.15, 1.2, 2)),
                              tuple(rng.uniform(0, 2 * np.pi, 2))))
    return CsiScene(reflectors=refl, noise_sigma=noise_sigma, seed=seed)
