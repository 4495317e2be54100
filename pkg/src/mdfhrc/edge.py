"""Micro-edge runtime and the data controller.

Each pipeline's micro-edge denoises incoming frames with its background
model, windows them, publishes per-sensor moment telemetry and hands the
pipeline's feature matrix to the fusion stage.  The fusion stage stacks the
pipelines selected for each HRC function into a FeatureGrid and publishes it
for the cloud tier.  Selections can be changed at run time by control
messages; a change takes effect at the next window boundary.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import (
    CSI_ANTENNAS,
    CSI_SUBCARRIERS,
    MdfError,
    PipelineId,
    RawFrame,
    SensorId,
    unpack_csi,
)
from .features import (
    DegenerateWindow,
    FeatureGrid,
    FeatureVector,
    compute_moments,
    feature_matrix,
    fuse_features,
)
from .prep import (
    BackgroundModel,
    CsiCalibration,
    IrBackground,
    RadarBackground,
    ThzBackground,
    background_from_json,
    background_to_json,
    csi_isolate,
    fit_radar_background,
    ir_denoise,
    radar_denoise,
    thz_denoise,
    thz_normalize,
    whiten,
)
from .transport.latency import wall_ms
from .transport.messages import TelemetryMessage

DEFAULT_WINDOW = 32
DEFAULT_RADAR_REG = 1e-3


class UnknownPipeline(MdfError):
    code = "UnknownPipeline"


class BadConfig(MdfError):
    code = "BadConfig"


class HrcFunction(str, enum.Enum):
    COUNTING = "counting"
    MOTION = "motion"          # d > 1 m
    COPRESENCE = "copresence"  # d < 1 m

    @classmethod
    def parse(cls, value) -> "HrcFunction":
        try:
            return cls(value.value if isinstance(value, cls) else str(value))
        except ValueError:
            raise BadConfig(f"unknown HRC function {value!r}") from None


DEFAULT_SELECTION = {
    HrcFunction.COUNTING: frozenset({PipelineId.CSI}),
    HrcFunction.MOTION: frozenset({PipelineId.RADAR, PipelineId.THZ}),
    HrcFunction.COPRESENCE: frozenset({PipelineId.RADAR, PipelineId.THZ, PipelineId.IR}),
}


def select_pipelines(function, overrides: Mapping | None = None) -> frozenset:
    f = HrcFunction.parse(function)
    if overrides and f in overrides:
        return frozenset(overrides[f])
    return DEFAULT_SELECTION[f]


def _parse_pipelines(values) -> frozenset:
    out = set()
    for v in values:
        try:
            out.add(PipelineId.parse(v))
        except (ValueError, MdfError):
            raise UnknownPipeline(f"unknown pipeline {v!r}") from None
    if not out:
        raise UnknownPipeline("pipeline subset must not be empty")
    return frozenset(out)


def apply_controller_update(selection: Mapping, update: Mapping) -> dict:
    """New selection map after a control message {"function", "pipelines"}."""
    f = HrcFunction.parse(update.get("function"))
    new = dict(selection)
    new[f] = _parse_pipelines(update.get("pipelines", ()))
    return new


# -- background models and denoising -------------------------------------------

def boresight_weights() -> np.ndarray:
    return np.ones(CSI_ANTENNAS, dtype=complex) / np.sqrt(CSI_ANTENNAS)


def fit_background(sensor: SensorId, x: np.ndarray,
                   radar_regularization: float = DEFAULT_RADAR_REG) -> BackgroundModel:
    """Fit the pipeline's background model on an empty-cell array (frames as rows)."""
    x = np.asarray(x, dtype=float)
    if sensor.pipeline == PipelineId.RADAR:
        return fit_radar_background(x, radar_regularization, sensor)
    if sensor.pipeline == PipelineId.THZ:
        return ThzBackground(sensor, x.mean(axis=0), x.std(axis=0))
    if sensor.pipeline == PipelineId.IR:
        return IrBackground(sensor, x.mean(axis=0))
    w = boresight_weights()
    los = np.mean(w.conj() @ unpack_csi(x), axis=0)
    return CsiCalibration(sensor, w, los)


def fit_backgrounds(arrays: Mapping, radar_regularization: float = DEFAULT_RADAR_REG) -> dict:
    return {s: fit_background(s, x, radar_regularization) for s, x in arrays.items()}


def denoise_array(x: np.ndarray, bg: BackgroundModel) -> np.ndarray:
    """Vectorized denoising of a (T, frame_len) stack; same maths as the per-frame ops."""
    x = np.asarray(x, dtype=float)
    if isinstance(bg, RadarBackground):
        return whiten(x, bg)
    if isinstance(bg, ThzBackground):
        return thz_normalize(x, bg)
    if isinstance(bg, IrBackground):
        return x - bg.frame
    z = unpack_csi(x)                                   # (T, M, S)
    y = np.einsum("m,tms->ts", bg.weights.conj(), z) - bg.los_estimate
    back = bg.weights[None, :, None] * y[:, None, :]    # (T, M, S)
    out = np.empty(x.shape)
    out[:, 0::2] = back.real.reshape(len(x), -1)
    out[:, 1::2] = back.imag.reshape(len(x), -1)
    return out


def denoise_frame(frame: RawFrame, bg: BackgroundModel) -> RawFrame:
    if isinstance(bg, RadarBackground):
        return radar_denoise(frame, bg)
    if isinstance(bg, ThzBackground):
        return thz_denoise(frame, bg)
    if isinstance(bg, IrBackground):
        return ir_denoise(frame, bg)
    return csi_isolate(frame, bg)


def save_backgrounds(path, backgrounds: Mapping, cell: str = "c1") -> None:
    docs = [json.loads(background_to_json(bg))
            for _, bg in sorted(backgrounds.items(), key=lambda kv: (int(kv[0].pipeline), kv[0].k))]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"cell": cell, "backgrounds": docs}, fh)


def load_backgrounds(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for d in doc["backgrounds"]:
        bg = background_from_json(json.dumps(d))
        out[bg.sensor] = bg
    return out


# -- batch path (whole recordings in memory) -----------------------------------

def batch_feature_matrices(arrays: Mapping, backgrounds: Mapping, pipelines: Iterable,
                           window_len: int = DEFAULT_WINDOW) -> dict:
    """{pipeline: [feature matrix per complete window]} from raw sensor arrays."""
    out = {}
    for p in sorted(PipelineId.parse(q) for q in pipelines):
        sensors = sorted((s for s in arrays if s.pipeline == p), key=lambda s: s.k)
        if not sensors:
            raise UnknownPipeline(f"no sensors for pipeline {int(p)}")
        den = [denoise_array(arrays[s], backgrounds[s]) for s in sensors]
        n = min(len(d) for d in den) // window_len
        out[p] = [feature_matrix(p, [d[w * window_len:(w + 1) * window_len] for d in den])
                  for w in range(n)]
    return out


def batch_grids(arrays: Mapping, backgrounds: Mapping, selection,
                window_len: int = DEFAULT_WINDOW, times=None) -> list[FeatureGrid]:
    mats = batch_feature_matrices(arrays, backgrounds, selection, window_len)
    n = min(len(v) for v in mats.values())
    if times is None:
        times = np.arange(n * window_len)
    ends = [int(times[(w + 1) * window_len - 1]) for w in range(n)]
    return [fuse_features({p: m[w] for p, m in mats.items()}, selection, ends[w])
            for w in range(n)]


def grids_to_array(grids: Iterable[FeatureGrid]) -> np.ndarray:
    return np.stack([g.as_array() for g in grids])


# -- streaming runtime ---------------------------------------------------------------

@dataclass
class PipelineBinding:
    pipeline: PipelineId
    backgrounds: dict
    window_len: int = DEFAULT_WINDOW
    sensors: list = field(default_factory=list)

    def __post_init__(self):
        self.pipeline = PipelineId.parse(self.pipeline)
        if not self.sensors:
            self.sensors = sorted(self.backgrounds, key=lambda s: s.k)
        kinds = {PipelineId.RADAR: "radar", PipelineId.THZ: "thz", PipelineId.IR: "ir",
                 PipelineId.CSI: "csi"}
        for s in self.sensors:
            if s.pipeline != self.pipeline:
                raise BadConfig(f"sensor {s} does not belong to pipeline {int(self.pipeline)}")
            bg = self.backgrounds.get(s)
            if bg is None:
                raise BadConfig(f"no background model for sensor {s}")
            if bg.kind != kinds[self.pipeline]:
                raise BadConfig(f"background kind {bg.kind} does not match pipeline")
        if self.window_len < 2:
            raise BadConfig("window_len must be >= 2")


@dataclass
class WindowOutput:
    pipeline: PipelineId
    index: int
    window_end: int
    ingest_ms: float
    matrix: np.ndarray
    features: list
    errors: list


class MicroEdge:
    """One pipeline: per-frame denoising and per-window feature extraction."""

    def __init__(self, binding: PipelineBinding, clock: Callable[[], float] = wall_ms):
        self.binding = binding
        self.clock = clock
        self._buf = {s: [] for s in binding.sensors}
        self._index = 0

    @property
    def window_index(self) -> int:
        return self._index

    def process(self, frame: RawFrame) -> WindowOutput | None:
        """Denoise one frame; returns the window output when a window completes."""
        t0 = self.clock()
        bg = self.binding.backgrounds.get(frame.sensor)
        if bg is None:
            raise BadConfig(f"sensor {frame.sensor} is not bound to this micro-edge")
        den = denoise_frame(frame, bg)
        self._buf[frame.sensor].append(den)
        L = self.binding.window_len
        if any(len(b) < L for b in self._buf.values()):
            return None
        windows = {s: self._buf[s][:L] for s in self.binding.sensors}
        for s in self.binding.sensors:
            del self._buf[s][:L]
        stacks = [np.stack([f.values for f in windows[s]]) for s in self.binding.sensors]
        matrix = feature_matrix(self.binding.pipeline, stacks)
        feats, errs = [], []
        for s in self.binding.sensors:
            w = windows[s]
            try:
                mu, sigma, zeta, kappa = compute_moments([f.values.mean() for f in w])
                feats.append(FeatureVector(s, w[-1].at, mu, sigma, zeta, kappa))
            except DegenerateWindow as exc:
                errs.append((s, exc))
        end = max(windows[s][-1].at for s in self.binding.sensors)
        out = WindowOutput(self.binding.pipeline, self._index, end, t0, matrix, feats, errs)
        self._index += 1
        return out


@dataclass
class EdgeConfig:
    cell: str = "c1"
    window_len: int = DEFAULT_WINDOW
    sensors: dict = field(default_factory=dict)   # pipeline -> [k, ...]
    backgrounds: str | None = None
    broker: str | None = None
    functions: list = field(default_factory=lambda: ["motion"])
    selection: dict = field(default_factory=dict)  # function -> [pipelines]
    radar_regularization: float = DEFAULT_RADAR_REG

    @classmethod
    def from_json(cls, doc: Mapping) -> "EdgeConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise BadConfig(f"unknown edge config fields: {sorted(extra)}")
        cfg = cls(**doc)
        for f in cfg.functions:
            HrcFunction.parse(f)
        return cfg

    @classmethod
    def load(cls, path) -> "EdgeConfig":
        with open(path, encoding="utf-8") as fh:
            cfg = cls.from_json(json.load(fh))
        if cfg.backgrounds and not Path(cfg.backgrounds).is_absolute():
            cfg.backgrounds = str(Path(path).parent / cfg.backgrounds)
        return cfg

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class EdgeRuntime:
    """All micro-edges of one cell plus the fusion stage and data controller."""

    def __init__(self, backgrounds: Mapping, *, cell: str = "c1",
                 window_len: int = DEFAULT_WINDOW, functions=("motion",),
                 selection: Mapping | None = None, publish: Callable | None = None,
                 clock: Callable[[], float] = wall_ms):
        self.cell = cell
        self.clock = clock
        self.publish = publish or (lambda msg: None)
        self.functions = [HrcFunction.parse(f) for f in functions]
        self.selection = {f: select_pipelines(f) for f in HrcFunction}
        for f, pipes in (selection or {}).items():
            self.selection[HrcFunction.parse(f)] = _parse_pipelines(pipes)
        by_pipe: dict = {}
        for s, bg in backgrounds.items():
            by_pipe.setdefault(s.pipeline, {})[s] = bg
        self.edges = {p: MicroEdge(PipelineBinding(p, bgs, window_len), clock)
                      for p, bgs in sorted(by_pipe.items())}
        self._snapshots: dict[int, dict] = {}
        self._pending: dict[int, dict] = {}
        self._emitted: dict[int, set] = {}
        self.grids_out = 0

    # topics
    def feature_topic(self, s: SensorId) -> str:
        return f"edge/{self.cell}/{int(s.pipeline)}/{s.k}"

    @property
    def error_topic(self) -> str:
        return f"edge/{self.cell}/errors"

    def grid_topic(self, f: HrcFunction) -> str:
        return f"fused/{self.cell}/{f.value}"

    def topics(self) -> list[str]:
        out = [self.error_topic, f"control/{self.cell}"]
        for e in self.edges.values():
            out += [self.feature_topic(s) for s in e.binding.sensors]
        out += [self.grid_topic(f) for f in HrcFunction]
        return out

    def apply_update(self, update: Mapping) -> None:
        self.selection = apply_controller_update(self.selection, update)

    def _dead_letter(self, t_ms: int, code: str, message: str) -> None:
        self.publish(TelemetryMessage(self.error_topic, int(t_ms), "error",
                                      {"code": code, "message": message}))

    def process(self, frame: RawFrame) -> list[FeatureGrid]:
        """Feed one raw frame; returns grids completed by it."""
        edge = self.edges.get(frame.sensor.pipeline)
        if edge is None:
            self._dead_letter(frame.at, "UnknownPipeline",
                              f"no micro-edge for pipeline {int(frame.sensor.pipeline)}")
            return []
        # the selection in force for a window is frozen when it opens
        w = edge.window_index
        if w not in self._snapshots:
            self._snapshots[w] = {f: self.selection[f] for f in self.functions}
        try:
            out = edge.process(frame)
        except MdfError as exc:
            self._dead_letter(frame.at, exc.code, str(exc))
            return []
        if out is None:
            return []
        for fv in out.features:
            self.publish(TelemetryMessage(self.feature_topic(fv.sensor), int(fv.window_end),
                                          "feature", fv.to_json()))
        for s, exc in out.errors:
            self._dead_letter(out.window_end, exc.code, f"sensor {s}: {exc}")
        self._pending.setdefault(out.index, {})[out.pipeline] = out
        return self._try_fuse(out.index)

    def _try_fuse(self, w: int) -> list[FeatureGrid]:
        have = self._pending.get(w, {})
        done = self._emitted.setdefault(w, set())
        grids = []
        for f, pipes in self._snapshots.get(w, {}).items():
            if f in done or not pipes <= set(have):
                continue
            outs = [have[p] for p in sorted(pipes)]
            end = max(o.window_end for o in outs)
            grid = fuse_features({p: have[p].matrix for p in pipes}, pipes, end)
            ingest = min(o.ingest_ms for o in outs)
            payload = grid.to_json()
            payload.update(function=f.value, ingest_ms=ingest, window=w)
            self.publish(TelemetryMessage(self.grid_topic(f), int(end), "grid", payload))
            done.add(f)
            grids.append(grid)
            self.grids_out += 1
        if len(done) == len(self._snapshots.get(w, {})):
            self._pending.pop(w, None)
            self._snapshots.pop(w, None)
            self._emitted.pop(w, None)
        return grids


def frame_from_message(msg: TelemetryMessage) -> RawFrame:
    p = msg.payload
    return RawFrame(SensorId(PipelineId.parse(p["pipeline"]), int(p["sensor"])),
                    int(p["t_ms"]), np.asarray(p["values"], dtype=float))


def arrays_from_messages(messages: Iterable[TelemetryMessage]) -> tuple[dict, dict]:
    """Group raw-frame messages into ({SensorId: (T, L) array}, {SensorId: times})."""
    vals: dict = {}
    times: dict = {}
    for m in messages:
        if m.kind != "raw":
            continue
        f = frame_from_message(m)
        vals.setdefault(f.sensor, []).append(f.values)
        times.setdefault(f.sensor, []).append(f.at)
    return ({s: np.stack(v) for s, v in vals.items()},
            {s: np.asarray(t, dtype=np.int64) for s, t in times.items()})
