"""Confusion matrices, per-class metrics and the fusion-gain table."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import LabeledDataset

FUSION_TOLERANCE = 0.02


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = actual, cols = predicted
    class_names: list

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if self.counts.shape != (k, k) or np.any(self.counts < 0):
            raise ValueError("confusion matrix must be KxK with non-negative counts")

    @classmethod
    def from_predictions(cls, actual, predicted, class_names) -> "ConfusionMatrix":
        k = len(class_names)
        m = np.zeros((k, k), dtype=np.int64)
        np.add.at(m, (np.asarray(actual, np.int64), np.asarray(predicted, np.int64)), 1)
        return cls(m, list(class_names))

    def metrics(self) -> dict:
        return metrics_from_matrix(self.counts, self.class_names)

    def to_json(self) -> dict:
        return {"class_names": self.class_names, "counts": self.counts.tolist()}


def metrics_from_matrix(counts, class_names) -> dict:
    m = np.asarray(counts, dtype=float)
    total = m.sum()
    diag = np.diag(m)
    col = m.sum(axis=0)
    row = m.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    return {
        "accuracy": float(diag.sum() / total) if total else 0.0,
        "precision": dict(zip(class_names, precision.tolist())),
        "recall": dict(zip(class_names, recall.tolist())),
        "support": dict(zip(class_names, row.astype(int).tolist())),
    }


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    predictions: np.ndarray
    probabilities: np.ndarray

    @property
    def accuracy(self) -> float:
        return self.confusion.metrics()["accuracy"]

    def to_json(self) -> dict:
        d = self.confusion.metrics()
        d["confusion"] = self.confusion.to_json()
        return d


def evaluate(model, test: LabeledDataset) -> Evaluation:
    if len(test) == 0:
        raise ValueError("empty test set")
    probs = model.predict_proba(test.x)
    pred = np.argmax(probs, axis=1)
    cm = ConfusionMatrix.from_predictions(test.y, pred, test.class_names)
    return Evaluation(cm, pred, probs)


def write_metrics(ev: Evaluation, csv_path, json_path=None) -> None:
    m = ev.confusion.metrics()
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["class", "precision", "recall", "support"])
        for c in ev.confusion.class_names:
            wr.writerow([c, f"{m['precision'][c]:.6f}", f"{m['recall'][c]:.6f}", m["support"][c]])
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(ev.to_json(), fh, indent=2, sort_keys=True)


def write_confusion_csv(cm: ConfusionMatrix, path, row_label: str = "actual") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"{row_label}\\predicted", *cm.class_names])
        for name, row in zip(cm.class_names, cm.counts):
            wr.writerow([name, *row.tolist()])


def fusion_gain_report(single: Mapping[str, float], fused: float,
                       tolerance: float = FUSION_TOLERANCE) -> dict:
    """Single-pipeline vs fused accuracy; violation when fused < best single - tolerance."""
    if not single:
        raise ValueError("need at least one single-pipeline accuracy")
    best = max(single.values())
    return {
        "single": dict(single),
        "fused": float(fused),
        "gain": {k: float(fused - v) for k, v in single.items()},
        "gain_over_best": float(fused - best),
        "violation": bool(fused < best - tolerance),
    }
