"""Request/response models of the HTTP service."""
from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class Envelope(BaseModel):
    topic: str
    t_ms: float
    kind: str
    payload: Any
    src: Optional[str] = None
    seq: Optional[int] = None


class Ack(BaseModel):
    ack: bool = True
    topic: str


class TopicList(BaseModel):
    topics: list[str]


class SafetyParamsIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v_w_mps: float = Field(ge=0)
    v_r_mps: float = Field(ge=0)
    v_s_mps: float = Field(ge=0)
    T_w_s: float = Field(ge=0)
    T_r_s: float = Field(ge=0)
    T_s_s: float = Field(ge=0)
    Z_w_m: float = Field(ge=0)
    Z_r_m: float = Field(default=0.0, ge=0)


class DistanceOut(BaseModel):
    d_p_m: float
    params: SafetyParamsIn


class OperatingPoint(BaseModel):
    Z_w_m: float = Field(ge=0)
    T_w_s: float = Field(ge=0)


class SafetyTableIn(BaseModel):
    points: dict[str, OperatingPoint]
    speeds_mps: list[float] = [0.5, 0.15]


class SsmIn(BaseModel):
    t_ms: int
    d_m: float = Field(ge=0)


class LatencyIn(BaseModel):
    function: str
    ingest_ms: float
    classified_ms: float


class ErrorOut(BaseModel):
    error: str
    message: str
