"""Capture files: one envelope per line, replayable.

Replay either yields messages as fast as possible or paces them by their
``t_ms`` differences multiplied by ``scale``.
"""
from __future__ import annotations

import time
from pathlib import Path
from typing import Iterable, Iterator

from .messages import TelemetryMessage, decode, encode


def write_capture(path, messages: Iterable[TelemetryMessage]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for msg in messages:
            fh.write(encode(msg))
            fh.write("\n")
            n += 1
    return n


def read_capture(path) -> Iterator[TelemetryMessage]:
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield decode(line)


def replay(path, sink, *, scale: float | None = None, sleep=time.sleep) -> int:
    """Feed every captured message to ``sink(msg)``.

    With ``scale`` set, waits (t_next - t_prev) * scale ms between messages;
    ``scale=None`` replays without pacing.
    """
    prev = None
    n = 0
    for msg in read_capture(path):
        if scale is not None and prev is not None and msg.t_ms > prev:
            sleep((msg.t_ms - prev) * scale / 1000.0)
        prev = msg.t_ms
        sink(msg)
        n += 1
    return n
