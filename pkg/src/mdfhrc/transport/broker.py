"""In-process publish/subscribe broker with retained last values.

Delivery is at-most-once.  Each subscription owns a bounded queue; a full
queue never blocks the publisher, it drops according to the subscription's
overflow policy and counts the drop.  Fan-out happens under the broker lock,
so messages from one publisher reach every subscriber in publish order.
"""
from __future__ import annotations

import collections
import threading
import time
from typing import Iterator

from ..core import MdfError
from .messages import TelemetryMessage, filter_matches, parse_filter, topic_class


class UnknownTopic(MdfError):
    code = "UnknownTopic"


class NotFound(MdfError):
    code = "NotFound"


DROP_OLDEST = "drop-oldest"
DROP_NEWEST = "drop-newest"


class Subscription:
    def __init__(self, broker: "Broker", flt: str, maxlen: int, overflow: str):
        if overflow not in (DROP_OLDEST, DROP_NEWEST):
            raise ValueError(f"unknown overflow policy {overflow!r}")
        self.filter = flt
        self._segs = parse_filter(flt)
        self._broker = broker
        self._queue: collections.deque = collections.deque()
        self._maxlen = maxlen
        self._overflow = overflow
        self._cond = threading.Condition()
        self.dropped = 0
        self.closed = False

    def matches(self, topic: str) -> bool:
        return filter_matches(self._segs, topic)

    def _offer(self, msg: TelemetryMessage) -> None:
        with self._cond:
            if len(self._queue) >= self._maxlen:
                self.dropped += 1
                if self._overflow == DROP_NEWEST:
                    return
                self._queue.popleft()
            self._queue.append(msg)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> TelemetryMessage | None:
        """Next message, or None on timeout / after close with an empty queue."""
        with self._cond:
            deadline = None if timeout is None else time.monotonic() + timeout
            while not self._queue:
                if self.closed:
                    return None
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._queue.popleft()

    def drain(self) -> list[TelemetryMessage]:
        with self._cond:
            items = list(self._queue)
            self._queue.clear()
            return items

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def close(self) -> None:
        self._broker._remove(self)
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    def __iter__(self) -> Iterator[TelemetryMessage]:
        while True:
            msg = self.get()
            if msg is None:
                return
            yield msg


class Broker:
    def __init__(self, *, validate: bool = True, queue_size: int = 10_000,
                 overflow: str = DROP_OLDEST, auto_register: bool = False):
        self.validate = validate
        self.queue_size = queue_size
        self.overflow = overflow
        self.auto_register = auto_register
        self._lock = threading.Lock()
        self._topics: set[str] = set()
        self._subs: list[Subscription] = []
        self._retained: dict[str, TelemetryMessage] = {}
        self.published = 0

    def register(self, *topics: str) -> None:
        for t in topics:
            topic_class(t)
        with self._lock:
            self._topics.update(topics)

    @property
    def topics(self) -> set[str]:
        with self._lock:
            return set(self._topics)

    def publish(self, msg: TelemetryMessage) -> bool:
        """Deliver to all current matching subscribers; returns the ack."""
        if self.validate:
            msg.validate()
        with self._lock:
            if msg.topic not in self._topics:
                if not self.auto_register:
                    raise UnknownTopic(msg.topic)
                topic_class(msg.topic)
                self._topics.add(msg.topic)
            self._retained[msg.topic] = msg
            self.published += 1
            for sub in self._subs:
                if sub.matches(msg.topic):
                    sub._offer(msg)
        return True

    def subscribe(self, flt: str, *, queue_size: int | None = None,
                  overflow: str | None = None) -> Subscription:
        sub = Subscription(self, flt, queue_size or self.queue_size,
                           overflow or self.overflow)
        with self._lock:
            self._subs.append(sub)
        return sub

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def fetch(self, topic: str) -> TelemetryMessage:
        """Latest retained message on ``topic`` (not consumed)."""
        with self._lock:
            try:
                return self._retained[topic]
            except KeyError:
                raise NotFound(topic) from None

    def dropped(self) -> int:
        with self._lock:
            return sum(s.dropped for s in self._subs)
