"""Speed-and-separation monitoring (ISO/TS 15066).

Protective separation distance, closed form and general integral form, plus a
latched SSM monitor that turns distance estimates into robot commands.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import MdfError


class HorizonTooShort(MdfError):
    code = "HorizonTooShort"


class NoGroundTruth(MdfError):
    code = "NoGroundTruth"


@dataclass(frozen=True)
class SafetyParams:
    v_w: float  # m/s, worker speed towards the robot
    v_r: float  # m/s, robot speed towards the worker
    v_s: float  # m/s, mean robot speed while stopping
    T_w: float  # s, worker detection latency
    T_r: float  # s, stop-command activation time
    T_s: float  # s, stopping time
    Z_w: float  # m, worker localization accuracy
    Z_r: float = 0.0  # m, robot localization accuracy

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and non-negative, got {v}")

    def with_(self, **kw) -> "SafetyParams":
        return replace(self, **kw)

    # config files carry units in the key names
    _UNITS = {"v_w": "mps", "v_r": "mps", "v_s": "mps", "T_w": "s", "T_r": "s",
              "T_s": "s", "Z_w": "m", "Z_r": "m"}

    def to_config(self) -> dict:
        return {f"{k}_{self._UNITS[k]}": v for k, v in asdict(self).items()}

    @classmethod
    def from_config(cls, doc: Mapping) -> "SafetyParams":
        kw = {}
        for name, unit in cls._UNITS.items():
            key = f"{name}_{unit}"
            if key in doc:
                kw[name] = float(doc[key])
            elif name != "Z_r":
                raise KeyError(f"safety config is missing {key}")
        return cls(**kw)


# Robot-cell constants that the closed form needs besides (Z_w, T_w).  The
# pilot's parameter table is not recoverable, so these are reconstructed: T_r
# makes a 0.5 -> 0.15 m/s robot slow-down remove 0.04 m at T_w = 90 ms, and
# v_w, v_s (with T_s = 0.25 s) put the two operating points at 0.83 m and
# 0.63 m for v_r = 0.5 m/s.
RECONSTRUCTED_CELL = {
    "v_w_mps": 0.632075,
    "v_r_mps": 0.5,
    "v_s_mps": 0.250404,
    "T_r_s": 0.0242857,
    "T_s_s": 0.25,
    "Z_r_m": 0.0,
}

OPERATING_POINTS = {
    # function: (Z_w m, T_w s, reference d_p m at v_r = 0.5 m/s)
    "motion": (0.54, 0.037, 0.83),
    "copresence": (0.28, 0.090, 0.63),
}


def cell_params(Z_w: float, T_w: float, cell: Mapping | None = None, **over) -> SafetyParams:
    doc = dict(RECONSTRUCTED_CELL if cell is None else cell)
    doc.update({"Z_w_m": Z_w, "T_w_s": T_w})
    return SafetyParams.from_config(doc).with_(**over)


def protective_distance(p: SafetyParams, with_z_r: bool = False) -> float:
    """Closed form d_p.

    The robot localization term Z_r is neglected (Z_r << Z_w) unless
    ``with_z_r`` is set, in which case the result is directly comparable with
    :func:`protective_distance_integral` under constant speeds.
    """
    d = (p.v_w * (p.T_w + p.T_r + p.T_s) + p.v_r * (p.T_w + p.T_r)
         + p.v_s * p.T_s + p.Z_w)
    return d + p.Z_r if with_z_r else d


@dataclass(frozen=True)
class SpeedProfiles:
    """Sampled speed functions; callables map seconds after t_0 to m/s."""
    v_w: Callable[[np.ndarray], np.ndarray]
    v_r: Callable[[np.ndarray], np.ndarray]
    v_s: Callable[[np.ndarray], np.ndarray]
    t0: float = 0.0
    horizon: float = math.inf  # seconds after t0 the profiles are defined for

    @classmethod
    def constant(cls, p: SafetyParams, t0: float = 0.0) -> "SpeedProfiles":
        def const(v):
            return lambda t: np.full(np.shape(t), v, dtype=float)
        return cls(const(p.v_w), const(p.v_r), const(p.v_s), t0)

    @classmethod
    def sampled(cls, t: Sequence[float], v_w, v_r, v_s, t0: float = 0.0) -> "SpeedProfiles":
        t = np.asarray(t, dtype=float)

        def interp(v):
            v = np.asarray(v, dtype=float)
            if np.any(v < 0):
                raise ValueError("speed samples must be non-negative")
            return lambda q: np.interp(q, t - t0, v)
        return cls(interp(v_w), interp(v_r), interp(v_s), t0, float(t[-1] - t0))


def _trapz(f, a: float, b: float, dt: float) -> float:
    if b <= a:
        return 0.0
    n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
    t = np.linspace(a, b, n + 1)
    y = np.asarray(f(t), dtype=float)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(t)) / 2)


def protective_distance_integral(profiles: SpeedProfiles, p: SafetyParams,
                                 dt: float = 1e-3) -> float:
    """General d_p(t0): trapezoidal integration at ``dt`` resolution."""
    t1 = p.T_w + p.T_r
    t2 = t1 + p.T_s
    if profiles.horizon < t2 - 1e-12:
        raise HorizonTooShort(f"profiles cover {profiles.horizon} s, need {t2} s")
    return (_trapz(profiles.v_w, 0.0, t2, dt) + _trapz(profiles.v_r, 0.0, t1, dt)
            + _trapz(profiles.v_s, t1, t2, dt) + p.Z_r + p.Z_w)


class Mode(str, enum.Enum):
    RUN = "Run"
    SLOW = "Slow"
    STOP = "ProtectiveStop"


@dataclass(frozen=True)
class SsmState:
    mode: Mode = Mode.RUN
    last_d: float = math.inf
    last_update: int = 0


def ssm_step(state: SsmState, d: float, d_p: float, hysteresis: float = 0.1,
             t_ms: int | None = None) -> tuple[SsmState, dict]:
    if d < 0:
        raise ValueError("distance must be non-negative")
    if state.mode == Mode.STOP and d <= d_p + 2 * hysteresis:
        mode = Mode.STOP  # latched until clearly released
    elif d <= d_p:
        mode = Mode.STOP
    elif d <= d_p + hysteresis:
        mode = Mode.SLOW
    else:
        mode = Mode.RUN
    t = state.last_update if t_ms is None else t_ms
    new = SsmState(mode, d, t)
    return new, {"t_ms": int(t), "d_m": float(d), "d_p_m": float(d_p), "mode": mode.value}


class SsmMonitor:
    """Stateful wrapper consuming one ordered distance stream."""

    def __init__(self, d_p: float, hysteresis: float = 0.1):
        self.d_p = d_p
        self.hysteresis = hysteresis
        self.state = SsmState()

    def update(self, t_ms: int, d: float) -> dict:
        self.state, cmd = ssm_step(self.state, d, self.d_p, self.hysteresis, t_ms)
        return cmd


def evaluate_uncertainty(predicted: Sequence[str], actual: Sequence[str],
                         landmarks: Mapping[str, Sequence[float]],
                         latencies_ms: Sequence[float]) -> tuple[float, float]:
    """(Z_w metres, T_w seconds) from landmark predictions and latency samples.

    Z_w is the mean Euclidean distance between predicted and true landmark
    coordinates over samples whose true label is a landmark.  Predictions of a
    non-landmark class (e.g. "empty") count as localized at the true position's
    farthest landmark, which keeps missed detections from lowering Z_w.
    """
    pairs = [(p, a) for p, a in zip(predicted, actual) if a in landmarks]
    if not pairs:
        raise NoGroundTruth("no samples with landmark ground truth")
    errs = []
    for p, a in pairs:
        ta = np.asarray(landmarks[a], float)
        if p in landmarks:
            errs.append(float(np.linalg.norm(np.asarray(landmarks[p], float) - ta)))
        else:
            errs.append(max(float(np.linalg.norm(np.asarray(v, float) - ta))
                            for v in landmarks.values()))
    lat = np.asarray(latencies_ms, dtype=float)
    t_w = float(lat.mean()) / 1000.0 if lat.size else 0.0
    return float(np.mean(errs)), t_w


def safety_table(z_t: Mapping[str, tuple[float, float]], speeds=(0.5, 0.15),
                 cell: Mapping | None = None) -> dict:
    """d_p per function and robot speed for measured (Z_w, T_w) pairs."""
    out = {}
    for function, (z_w, t_w) in z_t.items():
        out[function] = {
            "Z_w_m": z_w, "T_w_s": t_w,
            "d_p_m": {f"{v:g}": protective_distance(cell_params(z_w, t_w, cell, v_r=v))
                      for v in speeds},
        }
    return out


def load_safety_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
