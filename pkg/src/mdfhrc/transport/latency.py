"""Detection-latency instrumentation.

T_w runs from the moment the edge starts pre-processing a window's raw data
to the moment the cloud has classified the fused features of that window.
"""
from __future__ import annotations

import threading
import time
from collections import defaultdict

import numpy as np

from ..core import MdfError


class ClockSkew(MdfError):
    code = "ClockSkew"


def wall_ms() -> float:
    return time.time() * 1000.0


class LatencyRecorder:
    def __init__(self):
        self._lock = threading.Lock()
        self._samples: dict[str, list[float]] = defaultdict(list)

    def measure_latency(self, ingestion_ms: float, classified_ms: float,
                        function: str | None = None) -> float:
        if classified_ms < ingestion_ms:
            raise ClockSkew(f"classified at {classified_ms} before ingestion at {ingestion_ms}")
        t_w = classified_ms - ingestion_ms
        if function is not None:
            with self._lock:
                self._samples[function].append(t_w)
        return t_w

    def samples(self, function: str) -> list[float]:
        with self._lock:
            return list(self._samples.get(function, ()))

    def functions(self) -> list[str]:
        with self._lock:
            return sorted(self._samples)

    def histogram(self, function: str) -> dict:
        s = np.asarray(self.samples(function), dtype=float)
        if s.size == 0:
            return {"count": 0, "mean": None, "p50": None, "p95": None, "max": None}
        return {
            "count": int(s.size),
            "mean": float(s.mean()),
            "p50": float(np.percentile(s, 50)),
            "p95": float(np.percentile(s, 95)),
            "max": float(s.max()),
        }

    def report(self) -> dict:
        return {f: self.histogram(f) for f in self.functions()}


def measure_latency(ingestion_ms: float, classified_ms: float) -> float:
    return LatencyRecorder().measure_latency(ingestion_ms, classified_ms)
