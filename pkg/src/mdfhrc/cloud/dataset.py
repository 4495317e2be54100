"""Labelled grid datasets and the stratified train/test split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import MdfError, make_rng
from ..features import FeatureGrid


class TooFewSamples(MdfError):
    code = "TooFewSamples"


class InconsistentChannels(MdfError):
    code = "InconsistentChannels"


@dataclass
class LabeledDataset:
    x: np.ndarray          # (N, C, 32, 32)
    y: np.ndarray          # (N,) class indices
    class_names: list
    pipelines: tuple = ()
    window_end: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 4:
            raise InconsistentChannels(f"samples must be (N, C, H, W), got {self.x.shape}")
        if len(self.x) != len(self.y):
            raise ValueError("samples and labels differ in length")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise ValueError("label index outside the class list")
        if self.window_end is None:
            self.window_end = np.arange(len(self.y), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.x[idx], self.y[idx], list(self.class_names), self.pipelines,
                              self.window_end[idx])

    @classmethod
    def from_grids(cls, grids: Sequence[FeatureGrid], labels: Sequence[str],
                   class_names: Sequence[str]) -> "LabeledDataset":
        if not grids:
            raise TooFewSamples("no grids")
        pipes = {g.pipelines for g in grids}
        if len(pipes) != 1:
            raise InconsistentChannels(f"grids mix pipeline sets {sorted(pipes)}")
        index = {c: i for i, c in enumerate(class_names)}
        y = [index[str(lab)] for lab in labels]
        return cls(np.stack([g.as_array() for g in grids]), y, list(class_names),
                   tuple(int(p) for p in pipes.pop()),
                   np.array([g.window_end for g in grids], dtype=np.int64))


def split_dataset(ds: LabeledDataset, fraction: float = 0.8,
                  seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; each class with n >= 2 samples keeps at least one on each side."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = make_rng(seed)
    train, test = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise TooFewSamples(f"class {ds.class_names[c]!r} has a single sample")
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    tr = np.sort(np.concatenate(train))
    te = np.sort(np.concatenate(test))
    return ds.subset(tr), ds.subset(te)
