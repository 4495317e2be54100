"""Cloud consumer: classifies fused grids and pushes results back."""
from __future__ import annotations

import threading
from typing import Callable, Mapping

import numpy as np

from ..features import FeatureGrid
from ..safety import SsmMonitor
from ..transport.capture import read_capture
from ..transport.latency import LatencyRecorder, wall_ms
from ..transport.messages import TelemetryMessage
from .model import classify


class ReplayClock:
    """Clock driven by replayed envelopes: reads the current message's t_ms."""

    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


class CloudService:
    def __init__(self, models: Mapping, *, cell: str = "c1", publish: Callable | None = None,
                 clock: Callable[[], float] = wall_ms, recorder: LatencyRecorder | None = None,
                 landmarks: Mapping | None = None, robot=None,
                 d_p: Mapping | None = None, hysteresis: float = 0.1):
        self.models = dict(models)
        self.cell = cell
        self.publish = publish or (lambda msg: None)
        self.clock = clock
        self.recorder = recorder or LatencyRecorder()
        self.landmarks = dict(landmarks or {})
        self.robot = None if robot is None else np.asarray(robot, float)
        self.monitors = {f: SsmMonitor(v, hysteresis) for f, v in (d_p or {}).items()}
        self.results: list[dict] = []
        self._lock = threading.Lock()

    def topics(self) -> list[str]:
        out = [f"cloud/{self.cell}/{f}" for f in self.models]
        if self.monitors:
            out.append(f"cloud/{self.cell}/ssm")
        return out

    def handle(self, msg: TelemetryMessage) -> dict | None:
        if msg.kind != "grid":
            return None
        p = msg.payload
        function = p["function"]
        model = self.models.get(function)
        if model is None:
            return None
        grid = FeatureGrid.from_json(p)
        idx, probs = classify(model, grid)
        classified = self.clock()
        t_w = self.recorder.measure_latency(float(p["ingest_ms"]), classified, function)
        result = {
            "t_ms": int(p["t_ms"]), "function": function, "label": model.class_names[idx],
            "class_index": idx, "probs": probs.tolist(), "ingest_ms": float(p["ingest_ms"]),
            "classified_ms": float(classified),
        }
        if "window" in p:
            result["window"] = int(p["window"])
        with self._lock:
            self.results.append({**result, "T_w_ms": t_w})
        self.publish(TelemetryMessage(f"cloud/{self.cell}/{function}", result["t_ms"],
                                      "result", result))
        self._ssm(function, result)
        return result

    def _ssm(self, function: str, result: dict) -> None:
        mon = self.monitors.get(function)
        if mon is None or self.robot is None or result["label"] not in self.landmarks:
            return
        d = float(np.linalg.norm(np.asarray(self.landmarks[result["label"]], float) - self.robot))
        cmd = mon.update(result["t_ms"], d)
        self.publish(TelemetryMessage(f"cloud/{self.cell}/ssm", result["t_ms"], "ssm", cmd))

    def drain(self, subscription) -> int:
        n = 0
        for msg in subscription.drain():
            self.handle(msg)
            n += 1
        return n

    def serve(self, subscription, stop: threading.Event, poll_s: float = 0.1) -> None:
        while not stop.is_set():
            msg = subscription.get(timeout=poll_s)
            if msg is not None:
                self.handle(msg)


def replay_latency(path, service: CloudService) -> int:
    """Classify the grids of a capture with the service clock set to each envelope's t_ms.

    The measured latency is then t_ms - ingest_ms as stamped in the capture.
    """
    if not isinstance(service.clock, ReplayClock):
        service.clock = ReplayClock()
    n = 0
    for msg in read_capture(path):
        if msg.kind == "grid":
            service.clock.now = float(msg.t_ms)
            service.handle(msg)
            n += 1
    return n
