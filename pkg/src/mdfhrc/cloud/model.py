"""Reference classifiers for fused feature grids.

ReferenceMlp: the channels of a grid are flattened and concatenated, then
pass through tanh(64) -> tanh(32) -> softmax(K).  Trained by mini-batch
gradient descent with momentum on the mean cross-entropy plus an L2 penalty
on the weight matrices.  NearestCentroid is a training-light baseline.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import MdfError, make_rng
from ..features import FeatureGrid
from .dataset import InconsistentChannels, LabeledDataset


class ChannelMismatch(MdfError):
    code = "ChannelMismatch"


@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 1e-2
    hidden: tuple = (64, 32)
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json(cls, d) -> "TrainConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def flatten_channels(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*H*W), channel-major."""
    x = np.asarray(x, dtype=float)
    return x.reshape(len(x), -1)


# order of the parameter tensors in memory and in model files
PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3", "input_mean")


@dataclass
class ReferenceMlp:
    params: dict
    class_names: list
    pipelines: tuple
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list)

    kind = "ReferenceMlp"

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> int:
        return self.params["W1"].shape[0]

    @classmethod
    def init(cls, input_dim: int, class_names, pipelines=(), config: TrainConfig | None = None):
        cfg = config or TrainConfig()
        rng = make_rng(cfg.seed)
        sizes = [input_dim, *cfg.hidden, len(class_names)]
        params = {}
        for i in range(3):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"W{i + 1}"] = rng.uniform(-lim, lim, (fan_in, fan_out))
            params[f"b{i + 1}"] = np.zeros(fan_out)
        params["input_mean"] = np.zeros(input_dim)
        return cls(params, list(class_names), tuple(pipelines), cfg)

    def _forward(self, a0):
        p = self.params
        h1 = np.tanh(a0 @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        return h1, h2, softmax(h2 @ p["W3"] + p["b3"])

    def predict_proba(self, x) -> np.ndarray:
        a0 = flatten_channels(x)
        if a0.shape[1] != self.input_dim:
            raise ChannelMismatch(f"input has {a0.shape[1]} values, model expects {self.input_dim}")
        return self._forward(a0 - self.params["input_mean"])[2]

    def loss_and_grads(self, x, y) -> tuple[float, dict]:
        """Mean cross-entropy + L2 penalty, and its gradient for every trainable tensor."""
        p = self.params
        a0 = flatten_channels(x) - p["input_mean"]
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        h1, h2, prob = self._forward(a0)
        wd = self.config.weight_decay
        loss = -np.mean(np.log(np.maximum(prob[np.arange(n), y], 1e-300)))
        loss += 0.5 * wd * sum(np.sum(p[k] ** 2) for k in ("W1", "W2", "W3"))
        d3 = prob.copy()
        d3[np.arange(n), y] -= 1.0
        d3 /= n
        g = {"W3": h2.T @ d3 + wd * p["W3"], "b3": d3.sum(axis=0)}
        d2 = (d3 @ p["W3"].T) * (1 - h2 ** 2)
        g["W2"] = h1.T @ d2 + wd * p["W2"]
        g["b2"] = d2.sum(axis=0)
        d1 = (d2 @ p["W2"].T) * (1 - h1 ** 2)
        g["W1"] = a0.T @ d1 + wd * p["W1"]
        g["b1"] = d1.sum(axis=0)
        return float(loss), g

    def loss(self, x, y) -> float:
        return self.loss_and_grads(x, y)[0]

    def fit(self, ds: LabeledDataset) -> "ReferenceMlp":
        cfg = self.config
        rng = make_rng(cfg.seed + 1)
        x = flatten_channels(ds.x)
        self.params["input_mean"] = x.mean(axis=0)
        vel = {k: np.zeros_like(v) for k, v in self.params.items() if k != "input_mean"}
        n = len(ds)
        bs = max(1, min(cfg.batch_size, n))
        self.history = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                _, g = self.loss_and_grads(ds.x[idx], ds.y[idx])
                for k in vel:
                    vel[k] = cfg.momentum * vel[k] - cfg.learning_rate * g[k]
                    self.params[k] += vel[k]
            self.history.append(self.loss(ds.x, ds.y))
        return self


@dataclass
class NearestCentroid:
    params: dict
    class_names: list
    pipelines: tuple
    config: TrainConfig = field(default_factory=TrainConfig)

    kind = "NearestCentroid"

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> int:
        return self.params["centroids"].shape[1]

    @classmethod
    def train(cls, ds: LabeledDataset) -> "NearestCentroid":
        x = flatten_channels(ds.x)
        cents = np.zeros((ds.n_classes, x.shape[1]))
        for c in range(ds.n_classes):
            sel = ds.y == c
            if sel.any():
                cents[c] = x[sel].mean(axis=0)
            else:
                cents[c] = np.inf
        spread = np.mean(np.sum((x - cents[ds.y]) ** 2, axis=1)) if len(ds) else 1.0
        return cls({"centroids": cents, "scale": np.array([max(spread, 1e-12)])},
                   list(ds.class_names), tuple(ds.pipelines))

    def predict_proba(self, x) -> np.ndarray:
        a = flatten_channels(x)
        if a.shape[1] != self.input_dim:
            raise ChannelMismatch(f"input has {a.shape[1]} values, model expects {self.input_dim}")
        d2 = np.sum((a[:, None, :] - self.params["centroids"][None]) ** 2, axis=2)
        d2 = np.where(np.isfinite(d2), d2, np.inf)
        return softmax(-d2 / self.params["scale"][0])


def train_classifier(train: LabeledDataset, config: TrainConfig | None = None,
                     kind: str = "ReferenceMlp"):
    if len(train) == 0:
        raise InconsistentChannels("empty training set")
    if kind == "NearestCentroid":
        return NearestCentroid.train(train)
    if kind != "ReferenceMlp":
        raise ValueError(f"unknown model kind {kind!r}")
    model = ReferenceMlp.init(int(np.prod(train.x.shape[1:])), train.class_names,
                              train.pipelines, config)
    return model.fit(train)


def classify(model, grid) -> tuple[int, np.ndarray]:
    """(class index, softmax vector); ties go to the lowest index."""
    if isinstance(grid, FeatureGrid):
        if model.pipelines and tuple(int(p) for p in grid.pipelines) != tuple(model.pipelines):
            raise ChannelMismatch(
                f"grid pipelines {[int(p) for p in grid.pipelines]} != model {list(model.pipelines)}")
        x = grid.as_array()
    else:
        x = np.asarray(grid, dtype=float)
    probs = model.predict_proba(x[None])[0]
    return int(np.argmax(probs)), probs


def predict(model, x) -> np.ndarray:
    return np.argmax(model.predict_proba(x), axis=1)


def numerical_gradient(model: ReferenceMlp, x, y, name: str, index, eps: float = 1e-6) -> float:
    """Central finite difference of the loss w.r.t. one parameter entry."""
    p = model.params[name]
    old = p[index]
    p[index] = old + eps
    up = model.loss(x, y)
    p[index] = old - eps
    down = model.loss(x, y)
    p[index] = old
    return (up - down) / (2 * eps)
