"""Single-process deployment: edge and cloud joined by the in-process broker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .edge import EdgeRuntime, frame_from_message
from .cloud.service import CloudService
from .transport.broker import Broker
from .transport.latency import LatencyRecorder, wall_ms
from .transport.messages import TelemetryMessage


@dataclass
class InprocRun:
    broker: Broker
    edge: EdgeRuntime
    cloud: CloudService
    results: list = field(default_factory=list)
    frames: int = 0

    @property
    def recorder(self) -> LatencyRecorder:
        return self.cloud.recorder


def build_inprocess(backgrounds: Mapping, models: Mapping, *, cell: str = "c1",
                    window_len: int = 32, functions: Iterable = ("motion",),
                    selection: Mapping | None = None, clock: Callable[[], float] = wall_ms,
                    landmarks: Mapping | None = None, robot=None,
                    d_p: Mapping | None = None) -> InprocRun:
    broker = Broker(queue_size=1_000_000)
    edge = EdgeRuntime(backgrounds, cell=cell, window_len=window_len, functions=functions,
                       selection=selection, publish=broker.publish, clock=clock)
    cloud = CloudService(models, cell=cell, publish=broker.publish, clock=clock,
                         landmarks=landmarks, robot=robot, d_p=d_p)
    broker.register(*edge.topics(), *cloud.topics(),
                    *[f"cloud/{cell}/{f.value}" for f in edge.functions])
    return InprocRun(broker, edge, cloud)


def run_inprocess(messages: Iterable[TelemetryMessage], run: InprocRun) -> InprocRun:
    """Feed raw frames through edge -> broker -> cloud with a deterministic schedule.

    After every frame the cloud drains whatever grids the edge has published,
    so results are produced in window order.  Control messages in the input
    are applied to the edge as they arrive.
    """
    grids = run.broker.subscribe(f"fused/{run.edge.cell}/+")
    try:
        for msg in messages:
            if msg.kind == "control":
                run.edge.apply_update(msg.payload)
                continue
            if msg.kind != "raw":
                continue
            run.edge.process(frame_from_message(msg))
            run.frames += 1
            for g in grids.drain():
                res = run.cloud.handle(g)
                if res is not None:
                    run.results.append(res)
    finally:
        grids.close()
    return run
