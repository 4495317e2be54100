"""Scenario description: cell geometry, landmarks, worker tracks, noise."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Mapping

import numpy as np

from ..core import MdfError

ROOM = (5.5, 4.0)

MOTION_CLASSES = ["1", "2A", "2B", "3", "4", "5A", "5B", "6"]
COPRESENCE_CLASSES = ["A", "B", "C", "D", "E", "empty"]

# documented default grid; the pilot's coordinates are not published
DEFAULT_LANDMARKS = {
    "1": (0.8, 3.2), "2A": (1.8, 3.0), "2B": (1.8, 3.0), "3": (2.75, 3.3),
    "4": (3.7, 3.0), "5A": (4.7, 3.2), "5B": (4.7, 3.2), "6": (4.9, 2.0),
    "A": (2.05, 1.55), "B": (2.4, 1.8), "C": (2.75, 1.9), "D": (3.1, 1.8),
    "E": (3.45, 1.55),
}

DEFAULT_RADARS = [(0.0, 1.0), (0.0, 3.0), (5.5, 1.0), (5.5, 3.0), (1.8, 4.0), (3.7, 4.0)]

# top-down floor regions ([x0, x1], [y0, y1]) imaged by the three 8x8 arrays;
# array 1 is the ceiling unit above the robot
DEFAULT_IR_VIEWS = [((1.55, 3.95), (0.4, 2.8)), ((0.5, 5.0), (0.0, 4.0)),
                    ((1.0, 4.5), (0.5, 3.5))]

EMPTY = "empty"


class BadScenario(MdfError):
    code = "BadConfig"


@dataclass
class Scenario:
    name: str = "scenario"
    function: str = "motion"
    cell: str = "c1"
    seed: int = 1
    room: tuple = ROOM
    robot: tuple = (2.75, 1.0)
    landmarks: dict = field(default_factory=lambda: dict(DEFAULT_LANDMARKS))
    # one track per worker: [[t_ms, label], ...]; a label holds from its time
    # until the next entry; "empty" means the worker is absent
    tracks: list = field(default_factory=list)
    duration_ms: int = 10_000
    frame_period_ms: int = 50
    window_len: int = 32
    walk_sigma: float = 0.1
    radars: list = field(default_factory=lambda: list(DEFAULT_RADARS))
    thz_los_y: float = 3.6
    thz_source_x: float = 0.3
    thz_camera_x: float = 5.2
    ir_views: list = field(default_factory=lambda: [list(v) for v in DEFAULT_IR_VIEWS])
    noise: dict = field(default_factory=lambda: {"radar": 1.0, "thz": 1.0, "ir": 1.0,
                                                 "csi": 1.0})
    pipelines: list = field(default_factory=lambda: [1, 2])
    empty_frames: int = 256  # calibration recording length

    def __post_init__(self):
        w, h = self.room
        for label, (x, y) in self.landmarks.items():
            if not (0 <= x <= w and 0 <= y <= h):
                raise BadScenario(f"landmark {label} at ({x}, {y}) lies outside the cell")
        for tr in self.tracks:
            times = [int(t) for t, _ in tr]
            if times != sorted(times):
                raise BadScenario("track times must be non-decreasing")
            for _, lab in tr:
                if lab != EMPTY and lab not in self.landmarks:
                    raise BadScenario(f"unknown landmark {lab!r} in track")
        if self.frame_period_ms <= 0 or self.window_len < 2:
            raise BadScenario("frame period must be positive and window_len >= 2")

    @property
    def classes(self) -> list:
        return MOTION_CLASSES if self.function == "motion" else COPRESENCE_CLASSES

    @property
    def n_frames(self) -> int:
        return self.duration_ms // self.frame_period_ms

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.int64) * self.frame_period_ms

    def noiseless(self) -> "Scenario":
        return replace(self, noise={k: 0.0 for k in self.noise}, name=self.name + "-noiseless")

    def label_at(self, worker: int, t_ms: int) -> str:
        label = EMPTY
        for t, lab in self.tracks[worker]:
            if t_ms >= t:
                label = lab
            else:
                break
        return label

    def segment_index(self, worker: int, t_ms: int) -> int:
        idx = 0
        for i, (t, _) in enumerate(self.tracks[worker]):
            if t_ms >= t:
                idx = i
        return idx

    def to_json(self) -> dict:
        d = asdict(self)
        d["room"] = list(self.room)
        d["robot"] = list(self.robot)
        d["landmarks"] = {k: list(v) for k, v in self.landmarks.items()}
        d["radars"] = [list(r) for r in self.radars]
        return d

    @classmethod
    def from_json(cls, doc: Mapping) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise BadScenario(f"unknown scenario fields: {sorted(extra)}")
        d = dict(doc)
        for key in ("room", "robot"):
            if key in d:
                d[key] = tuple(d[key])
        if "landmarks" in d:
            d["landmarks"] = {k: tuple(v) for k, v in d["landmarks"].items()}
        if "radars" in d:
            d["radars"] = [tuple(r) for r in d["radars"]]
        return cls(**d)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return Scenario.from_json(json.load(fh))


def shipped_scenario(name: str) -> Scenario:
    """Load one of the scenarios bundled under ``mdfhrc/data``."""
    text = resources.files("mdfhrc.data").joinpath(f"{name}.json").read_text("utf-8")
    return Scenario.from_json(json.loads(text))


def landmark_sweep(classes, windows_per_class: int, window_ms: int,
                   repeats: int = 1) -> tuple[list, int]:
    """A single-worker track visiting each class for a block of windows.

    The sweep is repeated ``repeats`` times so every class shows up at several
    points of the session.  Returns (track, duration_ms).
    """
    track = []
    t = 0
    block = max(1, windows_per_class // repeats)
    for r in range(repeats):
        n = block if r < repeats - 1 else windows_per_class - block * (repeats - 1)
        for label in classes:
            track.append([t, label])
            t += n * window_ms
    return track, t
