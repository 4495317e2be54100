from .broker import DROP_NEWEST, DROP_OLDEST, Broker, NotFound, Subscription, UnknownTopic
from .capture import read_capture, replay, write_capture
from .latency import ClockSkew, LatencyRecorder, measure_latency, wall_ms
from .messages import (
    BadFilter,
    BadTopic,
    SchemaViolation,
    TelemetryMessage,
    decode,
    encode,
    topic_class,
)

__all__ = [
    "Broker", "Subscription", "UnknownTopic", "NotFound", "DROP_OLDEST", "DROP_NEWEST",
    "read_capture", "replay", "write_capture",
    "ClockSkew", "LatencyRecorder", "measure_latency", "wall_ms",
    "BadFilter", "BadTopic", "SchemaViolation", "TelemetryMessage", "decode", "encode",
    "topic_class",
]
