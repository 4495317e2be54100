"""Model files.

Layout: one line of UTF-8 JSON (the header) terminated by ``\\n``, followed
by a flat block of little-endian float64 values.  The header's ``layout``
lists (name, shape) pairs in storage order; every tensor is written
row-major (C order) directly after the previous one.

ReferenceMlp order: W1 (D x 64), b1, W2 (64 x 32), b2, W3 (32 x K), b3,
input_mean (D).  NearestCentroid order: centroids (K x D), scale (1).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import MdfError
from ..transport.messages import SchemaViolation
from .model import PARAM_ORDER, NearestCentroid, ReferenceMlp, TrainConfig

MAGIC = "mdfhrc-model"
VERSION = 1
_NC_ORDER = ("centroids", "scale")


class MissingFile(MdfError):
    code = "MissingFile"


def save_model(model, path, extra: dict | None = None) -> None:
    order = PARAM_ORDER if model.kind == "ReferenceMlp" else _NC_ORDER
    layout = [[k, list(model.params[k].shape)] for k in order]
    header = {
        "format": MAGIC, "version": VERSION, "kind": model.kind,
        "class_names": list(model.class_names),
        "pipelines": [int(p) for p in model.pipelines],
        "config": model.config.to_json(), "layout": layout,
        "dtype": "<f8", "extra": extra or {},
    }
    blob = b"".join(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in order)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def read_header(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise SchemaViolation(f"model file {path} is missing")
    with open(p, "rb") as fh:
        line = fh.readline()
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"bad model header: {exc}") from exc
    if header.get("format") != MAGIC:
        raise SchemaViolation("not a model file")
    return header


def load_model(path):
    header = read_header(path)
    with open(path, "rb") as fh:
        fh.readline()
        blob = fh.read()
    flat = np.frombuffer(blob, dtype="<f8")
    need = sum(int(np.prod(s)) for _, s in header["layout"])
    if flat.size != need:
        raise SchemaViolation(f"weight block has {flat.size} values, header needs {need}")
    params, pos = {}, 0
    for name, shape in header["layout"]:
        n = int(np.prod(shape))
        params[name] = flat[pos:pos + n].reshape(shape).astype(float)
        pos += n
    cls = {"ReferenceMlp": ReferenceMlp, "NearestCentroid": NearestCentroid}.get(header["kind"])
    if cls is None:
        raise SchemaViolation(f"unknown model kind {header['kind']!r}")
    model = cls(params, header["class_names"], tuple(header["pipelines"]),
                TrainConfig.from_json(header["config"]))
    model.extra = header.get("extra", {})
    return model
