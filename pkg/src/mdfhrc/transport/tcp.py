"""Newline-delimited JSON binding of the broker over TCP.

Every line is one JSON object.  Client requests carry an ``op``:

    {"op": "pub", "id": 7, "msg": <envelope>}       -> {"op": "ack", "id": 7}
    {"op": "sub", "filter": "edge/c1/+/+"}         -> {"op": "suback", ...}
                                                      then {"op": "msg", "msg": <envelope>} ...
    {"op": "fetch", "id": 8, "topic": "..."}       -> {"op": "retained", "id": 8, "msg": ...}
    {"op": "register", "id": 9, "topics": [...]}   -> {"op": "ack", "id": 9}

Failures come back as {"op": "err", "id": ..., "code": ..., "message": ...}.
A bare envelope line is accepted as a publish without ack.

Publishing over TCP is at-least-once: the client waits for the ack and
resends once on timeout, so consumers must tolerate duplicates (the
envelope's ``src``/``seq`` pair identifies them).
"""
from __future__ import annotations

import itertools
import json
import logging
import queue
import socket
import socketserver
import threading

from ..core import MdfError
from .broker import Broker, NotFound
from .messages import TelemetryMessage, encode

log = logging.getLogger(__name__)


class RemoteError(MdfError):
    code = "RemoteError"

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.remote_code = code


def _line(obj) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode()


def _envelope(msg: TelemetryMessage) -> dict:
    return json.loads(encode(msg))


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.write_lock = threading.Lock()
        self.subs = []

    def send(self, obj):
        with self.write_lock:
            self.wfile.write(_line(obj))
            self.wfile.flush()

    def handle(self):
        broker: Broker = self.server.broker
        for raw in self.rfile:
            if not raw.strip():
                continue
            try:
                req = json.loads(raw)
            except json.JSONDecodeError as exc:
                self.send({"op": "err", "id": None, "code": "SchemaViolation",
                           "message": str(exc)})
                continue
            op = req.get("op")
            rid = req.get("id")
            try:
                if op is None and "topic" in req:
                    broker.publish(TelemetryMessage.from_dict(req))
                elif op == "pub":
                    if self.server.drop_acks > 0:
                        # test hook: swallow the ack to exercise client retry
                        self.server.drop_acks -= 1
                        broker.publish(TelemetryMessage.from_dict(req["msg"]))
                        continue
                    broker.publish(TelemetryMessage.from_dict(req["msg"]))
                    self.send({"op": "ack", "id": rid})
                elif op == "register":
                    broker.register(*req["topics"])
                    self.send({"op": "ack", "id": rid})
                elif op == "fetch":
                    msg = broker.fetch(req["topic"])
                    self.send({"op": "retained", "id": rid, "msg": _envelope(msg)})
                elif op == "sub":
                    sub = broker.subscribe(req["filter"])
                    self.subs.append(sub)
                    self.send({"op": "suback", "id": rid, "filter": req["filter"]})
                    threading.Thread(target=self._pump, args=(sub,), daemon=True).start()
                else:
                    self.send({"op": "err", "id": rid, "code": "BadRequest",
                               "message": f"unknown op {op!r}"})
            except MdfError as exc:
                self.send({"op": "err", "id": rid, "code": exc.code, "message": str(exc)})
            except (KeyError, TypeError) as exc:
                self.send({"op": "err", "id": rid, "code": "BadRequest", "message": str(exc)})

    def _pump(self, sub):
        try:
            for msg in sub:
                self.send({"op": "msg", "msg": _envelope(msg)})
        except OSError:
            pass
        finally:
            sub.close()

    def finish(self):
        for sub in self.subs:
            sub.close()
        try:
            super().finish()
        except OSError:
            pass


class TcpBrokerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self.drop_acks = 0
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "TcpBrokerServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class TcpClient:
    """Request/response client for publish, fetch and register."""

    def __init__(self, host: str, port: int, timeout: float = 2.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""
        self.timeout = timeout
        self.address = (host, port)
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self.retries = 0

    def _request(self, obj, retry: bool = False):
        with self._lock:
            attempts = 2 if retry else 1
            for attempt in range(attempts):
                self.sock.sendall(_line(obj))
                try:
                    while True:
                        resp = json.loads(self._readline())
                        if resp.get("id") == obj.get("id"):
                            break
                except socket.timeout:
                    if attempt + 1 < attempts:
                        self.retries += 1
                        continue
                    raise TimeoutError(f"no reply to {obj.get('op')} id={obj.get('id')}")
                if resp["op"] == "err":
                    if resp["code"] == "NotFound":
                        raise NotFound(resp["message"])
                    raise RemoteError(resp["code"], resp["message"])
                return resp

    def _readline(self) -> bytes:
        # socket.makefile refuses further reads after a timeout, so buffer by hand
        while b"\n" not in self._buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("broker closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def publish(self, msg: TelemetryMessage) -> bool:
        self._request({"op": "pub", "id": next(self._ids), "msg": _envelope(msg)}, retry=True)
        return True

    def register(self, *topics: str) -> None:
        self._request({"op": "register", "id": next(self._ids), "topics": list(topics)})

    def fetch(self, topic: str) -> TelemetryMessage:
        resp = self._request({"op": "fetch", "id": next(self._ids), "topic": topic})
        return TelemetryMessage.from_dict(resp["msg"])

    def subscribe(self, flt: str) -> "TcpSubscription":
        return TcpSubscription(self.address[0], self.address[1], flt, self.timeout)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class TcpSubscription:
    def __init__(self, host: str, port: int, flt: str, timeout: float = 2.0):
        self.filter = flt
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.sock.sendall(_line({"op": "sub", "id": 0, "filter": flt}))
        resp = json.loads(self.rfile.readline())
        if resp["op"] == "err":
            raise RemoteError(resp["code"], resp["message"])
        self.sock.settimeout(None)
        self._q: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self):
        try:
            for line in self.rfile:
                resp = json.loads(line)
                if resp.get("op") == "msg":
                    self._q.put(TelemetryMessage.from_dict(resp["msg"]))
        except (OSError, ValueError):
            pass
        finally:
            self._q.put(None)

    def get(self, timeout: float | None = None) -> TelemetryMessage | None:
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
