"""Topics, telemetry envelopes and payload schemas.

Wire envelope (one JSON document per line)::

    {"topic": "edge/c1/1/3", "t_ms": 1718.0, "kind": "feature", "payload": {...}}

Two optional envelope members are used by the platform: ``src`` (publisher
id) and ``seq`` (per-publisher sequence number).  Topic classes:

==========================  ===========  =============================
pattern                     kind         payload
==========================  ===========  =============================
edge/<cell>/<pipeline>/<k>  raw|feature  RawFrame | FeatureVector
edge/<cell>/errors          error        dead letter
fused/<cell>/<function>     grid         fused FeatureGrid
cloud/<cell>/<function>     result       classification result
cloud/<cell>/ssm            ssm          SSM monitor command
control/<cell>              control      data-controller update
==========================  ===========  =============================
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from ..core import MdfError, PipelineId


class BadTopic(MdfError):
    code = "BadTopic"


class BadFilter(MdfError):
    code = "BadFilter"


class SchemaViolation(MdfError):
    code = "SchemaViolation"


FUNCTIONS = ("counting", "motion", "copresence")


def split_topic(path: str) -> list[str]:
    segs = path.split("/")
    if not path or any(s == "" for s in segs):
        raise BadTopic(f"empty segment in topic {path!r}")
    if any("+" in s or "#" in s for s in segs):
        raise BadTopic(f"wildcards are not allowed in topic names: {path!r}")
    return segs


def topic_class(path: str) -> str:
    """Classify a concrete topic; raises BadTopic for unknown shapes."""
    segs = split_topic(path)
    root, n = segs[0], len(segs)
    if root == "edge" and n == 4:
        try:
            PipelineId.parse(segs[2])
            int(segs[3])
        except ValueError as exc:
            raise BadTopic(f"bad pipeline/sensor in {path!r}") from exc
        return "edge"
    if root == "edge" and n == 3 and segs[2] == "errors":
        return "errors"
    if root == "fused" and n == 3 and segs[2] in FUNCTIONS:
        return "fused"
    if root == "cloud" and n == 3 and segs[2] in FUNCTIONS:
        return "cloud"
    if root == "cloud" and n == 3 and segs[2] == "ssm":
        return "ssm"
    if root == "control" and n == 2:
        return "control"
    raise BadTopic(f"unknown topic class: {path!r}")


def parse_filter(flt: str) -> list[str]:
    segs = flt.split("/")
    if not flt or any(s == "" for s in segs):
        raise BadFilter(f"empty segment in filter {flt!r}")
    for s in segs:
        if "#" in s or ("+" in s and s != "+"):
            raise BadFilter(f"bad wildcard use in filter {flt!r}")
    return segs


def filter_matches(flt_segs: list[str], topic: str) -> bool:
    t = topic.split("/")
    return len(t) == len(flt_segs) and all(f == "+" or f == s for f, s in zip(flt_segs, t))


_num = {"type": "number"}
_int = {"type": "integer"}
_str = {"type": "string"}
_numlist = {"type": "array", "items": _num}

SCHEMAS: dict[str, dict] = {
    "raw": {
        "type": "object",
        "required": ["pipeline", "sensor", "t_ms", "values"],
        "properties": {"pipeline": {"enum": [1, 2, 3, 4]}, "sensor": _int,
                       "t_ms": _int, "values": _numlist},
    },
    "feature": {
        "type": "object",
        "required": ["pipeline", "sensor", "t_ms", "mu", "sigma", "zeta", "kappa"],
        "properties": {"pipeline": {"enum": [1, 2, 3, 4]}, "sensor": _int, "t_ms": _int,
                       "mu": _num, "sigma": {"type": "number", "minimum": 0},
                       "zeta": _num, "kappa": _num},
    },
    "grid": {
        "type": "object",
        "required": ["t_ms", "pipelines", "channels", "function", "ingest_ms"],
        "properties": {
            "t_ms": _int, "function": {"enum": list(FUNCTIONS)}, "ingest_ms": _num,
            "window": _int,
            "pipelines": {"type": "array", "items": {"enum": [1, 2, 3, 4]}},
            "channels": {"type": "array", "items": {"type": "array", "items": _numlist}},
        },
    },
    "result": {
        "type": "object",
        "required": ["t_ms", "function", "label", "class_index", "probs", "ingest_ms",
                     "classified_ms"],
        "properties": {"t_ms": _int, "function": {"enum": list(FUNCTIONS)}, "label": _str,
                       "class_index": _int, "probs": _numlist, "ingest_ms": _num,
                       "classified_ms": _num, "window": _int},
    },
    "ssm": {
        "type": "object",
        "required": ["t_ms", "d_m", "d_p_m", "mode"],
        "properties": {"t_ms": _int, "d_m": _num, "d_p_m": _num,
                       "mode": {"enum": ["Run", "Slow", "ProtectiveStop"]}},
    },
    "control": {
        "type": "object",
        "required": ["function", "pipelines"],
        "properties": {"function": {"enum": list(FUNCTIONS)},
                       "pipelines": {"type": "array", "items": _int}},
    },
    "error": {
        "type": "object",
        "required": ["code", "message"],
        "properties": {"code": _str, "message": _str},
    },
}

_ALLOWED_KINDS = {
    "edge": {"raw", "feature"},
    "errors": {"error"},
    "fused": {"grid"},
    "cloud": {"result"},
    "ssm": {"ssm"},
    "control": {"control"},
}

_VALIDATORS = {k: jsonschema.Draft7Validator(v) for k, v in SCHEMAS.items()}


@dataclass(frozen=True)
class TelemetryMessage:
    topic: str
    t_ms: float
    kind: str
    payload: Any = field(compare=True)
    src: str | None = None
    seq: int | None = None

    def validate(self) -> None:
        cls = topic_class(self.topic)
        if self.kind not in _ALLOWED_KINDS[cls]:
            raise SchemaViolation(f"kind {self.kind!r} not allowed on {cls} topics")
        if not isinstance(self.t_ms, (int, float)) or not math.isfinite(self.t_ms):
            raise SchemaViolation("t_ms must be a finite number")
        err = next(iter(_VALIDATORS[self.kind].iter_errors(self.payload)), None)
        if err is not None:
            raise SchemaViolation(f"{self.kind} payload: {err.message}")

    def to_dict(self) -> dict:
        d = {"topic": self.topic, "t_ms": self.t_ms, "kind": self.kind,
             "payload": self.payload}
        if self.src is not None:
            d["src"] = self.src
        if self.seq is not None:
            d["seq"] = self.seq
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TelemetryMessage":
        try:
            return cls(d["topic"], d["t_ms"], d["kind"], d["payload"],
                       d.get("src"), d.get("seq"))
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"bad envelope: {exc}") from exc


def encode(msg: TelemetryMessage) -> str:
    """One-line JSON (no trailing newline); keys sorted for byte stability."""
    return json.dumps(msg.to_dict(), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def decode(line: str | bytes) -> TelemetryMessage:
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise SchemaViolation("envelope must be a JSON object")
    return TelemetryMessage.from_dict(d)
