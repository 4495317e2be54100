"""HTTP face of the platform: broker publish/fetch, safety maths, SSM, latency."""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..core import MdfError
from ..safety import SafetyParams, SsmMonitor, protective_distance, safety_table
from ..transport.broker import Broker, NotFound, UnknownTopic
from ..transport.latency import LatencyRecorder
from ..transport.messages import BadTopic, SchemaViolation, TelemetryMessage
from .schemas import (
    Ack,
    DistanceOut,
    Envelope,
    LatencyIn,
    SafetyParamsIn,
    SafetyTableIn,
    SsmIn,
    TopicList,
)

_STATUS = {NotFound: 404, UnknownTopic: 404, SchemaViolation: 422, BadTopic: 422}


def create_app(broker: Broker | None = None, *, cell_config: dict | None = None,
               d_p: float | None = None, hysteresis: float = 0.1) -> FastAPI:
    app = FastAPI(title="mdfhrc", version="0.1.0")
    app.state.broker = broker or Broker()
    app.state.recorder = LatencyRecorder()
    app.state.cell = cell_config
    app.state.monitor = SsmMonitor(d_p, hysteresis) if d_p is not None else None

    @app.exception_handler(MdfError)
    async def _mdf_error(request: Request, exc: MdfError):
        status = next((s for cls, s in _STATUS.items() if isinstance(exc, cls)), 400)
        return JSONResponse({"error": exc.code, "message": str(exc)}, status_code=status)

    @app.get("/health")
    def health():
        return {"status": "ok", "published": app.state.broker.published}

    @app.get("/topics", response_model=TopicList)
    def topics():
        return TopicList(topics=sorted(app.state.broker.topics))

    @app.post("/topics", response_model=TopicList)
    def register(body: TopicList):
        app.state.broker.register(*body.topics)
        return TopicList(topics=sorted(app.state.broker.topics))

    @app.post("/publish", response_model=Ack)
    def publish(env: Envelope):
        msg = TelemetryMessage.from_dict(env.model_dump(exclude_none=True))
        app.state.broker.publish(msg)
        return Ack(topic=msg.topic)

    @app.get("/retained/{topic:path}", response_model=Envelope)
    def retained(topic: str):
        return Envelope(**app.state.broker.fetch(topic).to_dict())

    @app.post("/safety/protective-distance", response_model=DistanceOut)
    def distance(body: SafetyParamsIn):
        p = SafetyParams.from_config(body.model_dump())
        return DistanceOut(d_p_m=protective_distance(p), params=body)

    @app.post("/safety/table")
    def table(body: SafetyTableIn):
        pts = {f: (op.Z_w_m, op.T_w_s) for f, op in body.points.items()}
        return safety_table(pts, tuple(body.speeds_mps), app.state.cell)

    @app.post("/ssm")
    def ssm(body: SsmIn):
        if app.state.monitor is None:
            raise MdfError("no SSM monitor configured")
        return app.state.monitor.update(body.t_ms, body.d_m)

    @app.post("/latency")
    def latency(body: LatencyIn):
        t_w = app.state.recorder.measure_latency(body.ingest_ms, body.classified_ms,
                                                 body.function)
        return {"T_w_ms": t_w}

    @app.get("/latency")
    def latency_report():
        return app.state.recorder.report()

    return app
