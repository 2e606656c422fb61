"""
Small softmax classifiers with hand-written gradients.

theta layout (row-major throughout):
  linear: W (d x C), b (C)
  mlp:    W1 (d x h), b1 (h), W2 (h x C), b2 (C), tanh hidden activation
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score

from fedfeed import losses
from fedfeed.losses import LossSpec

LOG = logging.getLogger("fedfeed.models")


class ShapeError(ValueError):
    """Input dimensions do not match the model"""


@dataclass(frozen=True)
class Architecture:
    kind: str = "linear"
    hidden: Optional[int] = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind == "mlp" and (self.hidden is None or self.hidden < 1):
            raise ValueError("mlp architecture needs hidden >= 1")
        if self.kind == "linear" and self.hidden is not None:
            object.__setattr__(self, "hidden", None)
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def shapes(self, d: int, C: int) -> List[Tuple[int, ...]]:
        if self.kind == "linear":
            return [(d, C), (C,)]
        return [(d, self.hidden), (self.hidden,), (self.hidden, C), (C,)]

    def num_params(self, d: int, C: int) -> int:
        return int(sum(np.prod(shape) for shape in self.shapes(d, C)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "activation": self.activation}


def as_architecture(architecture: Union[str, Architecture], hidden: int = 32) -> Architecture:
    if isinstance(architecture, Architecture):
        return architecture
    return Architecture(architecture, hidden if architecture == "mlp" else None)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Value-semantic parameter vector; theta is read-only"""

    architecture: Architecture
    theta: np.ndarray
    d: int
    C: int

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True).ravel()
        expected = self.architecture.num_params(self.d, self.C)
        if theta.shape[0] != expected:
            raise ShapeError(f"theta has {theta.shape[0]} entries, architecture needs {expected}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def hidden(self) -> Optional[int]:
        return self.architecture.hidden

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return replace(self, theta=theta)

    def same_shape(self, other: "ModelParams") -> bool:
        return (self.architecture, self.d, self.C) == (other.architecture, other.d, other.C)

    def unpack(self) -> List[np.ndarray]:
        return _unpack(self.architecture, self.d, self.C, self.theta)


def _unpack(arch: Architecture, d: int, C: int, theta: np.ndarray) -> List[np.ndarray]:
    arrays, offset = [], 0
    for shape in arch.shapes(d, C):
        size = int(np.prod(shape))
        arrays.append(theta[offset : offset + size].reshape(shape))
        offset += size
    return arrays


@dataclass(frozen=True, eq=False)
class Posterior:
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, idx):
        return self.probs[idx]


@dataclass(frozen=True, eq=False)
class Batch:
    """Training rows: `labels[i]` is a complementary label where `negative[i]`"""

    X: np.ndarray
    labels: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        negative = np.asarray(self.negative, dtype=bool).reshape(-1)
        if not len(X) == len(labels) == len(negative):
            raise ShapeError("batch arrays disagree in length")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "negative", negative)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple], dim: int) -> "Batch":
        """Pairs of (x, label) or (x, label, is_negative)"""
        if not pairs:
            return cls.empty(dim)
        X = np.stack([np.asarray(pair[0], dtype=np.float64) for pair in pairs])
        labels = [pair[1] for pair in pairs]
        negative = [bool(pair[2]) if len(pair) > 2 else False for pair in pairs]
        return cls(X, labels, negative)

    @classmethod
    def positive(cls, X: np.ndarray, labels: Sequence[int]) -> "Batch":
        return cls(X, labels, np.zeros(len(labels), dtype=bool))

    @classmethod
    def empty(cls, dim: int) -> "Batch":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))

    @classmethod
    def concat(cls, *batches: "Batch") -> "Batch":
        return cls(
            np.concatenate([b.X for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.negative for b in batches]),
        )


def init_params(
    d: int,
    C: int,
    architecture: Union[str, Architecture] = "linear",
    init: str = "gaussian",
    seed: int = 0,
    sigma: float = 0.01,
    hidden: int = 32,
) -> ModelParams:
    """Weights ~ N(0, sigma^2) for `gaussian` with zero biases; everything 0 for `zeros`"""
    if d < 1 or C < 2:
        raise ShapeError(f"need d >= 1 and C >= 2, got d={d}, C={C}")
    arch = as_architecture(architecture, hidden)
    if init == "zeros":
        return ModelParams(arch, np.zeros(arch.num_params(d, C)), d, C)
    if init != "gaussian":
        raise ValueError(f"unknown init {init!r}")

    rng = np.random.default_rng(seed)
    parts = []
    for shape in arch.shapes(d, C):
        if len(shape) == 2:
            parts.append(rng.normal(0.0, sigma, size=shape).ravel())
        else:
            parts.append(np.zeros(shape))
    return ModelParams(arch, np.concatenate(parts), d, C)


def softmax(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _check_features(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ShapeError(f"expected features of shape (n, {params.d}), got {X.shape}")
    return X


def _logits(params: ModelParams, X: np.ndarray):
    return _logits_theta(params.architecture, params.d, params.C, params.theta, X)


def _logits_theta(arch: Architecture, d: int, C: int, theta: np.ndarray, X: np.ndarray):
    if arch.kind == "linear":
        W, b = _unpack(arch, d, C, theta)
        return X @ W + b, None
    W1, b1, W2, b2 = _unpack(arch, d, C, theta)
    H = np.tanh(X @ W1 + b1)
    return H @ W2 + b2, H


def logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return _logits(params, _check_features(params, X))[0]


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = _check_features(params, X)
    if len(X) == 0:
        return np.zeros((0, params.C))
    return softmax(_logits(params, X)[0])


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(predict_proba(params, X), axis=1)


def forward(params: ModelParams, x: np.ndarray) -> Posterior:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d,):
        raise ShapeError(f"expected a feature vector of length {params.d}, got shape {x.shape}")
    return Posterior(predict_proba(params, x[None, :])[0])


def pseudo_label(params: ModelParams, x: np.ndarray) -> int:
    return int(np.argmax(forward(params, x).probs))


def accuracy(params: ModelParams, dataset) -> Optional[float]:
    if dataset is None or len(dataset) == 0:
        return None
    return float(accuracy_score(dataset.labels, predict(params, dataset.features)))


def _as_batch(params: ModelParams, batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    return Batch.from_pairs(list(batch), params.d)


def loss_and_gradient(params: ModelParams, batch, loss_spec: LossSpec) -> Tuple[float, np.ndarray]:
    """Mean batch loss and its analytic gradient with respect to theta"""
    batch = _as_batch(params, batch)
    X = _check_features(params, batch.X)
    return _objective(params, params.theta, X, batch.labels, batch.negative, loss_spec)


def _objective(params: ModelParams, theta: np.ndarray, X, labels, negative, loss_spec: LossSpec):
    arch = params.architecture
    Z, H = _logits_theta(arch, params.d, params.C, theta, X)
    P = softmax(Z)
    loss, dP = losses.batch_objective(P, labels, negative, loss_spec)
    # softmax Jacobian: dz_k = p_k (g_k - sum_j g_j p_j)
    dZ = P * (dP - np.sum(dP * P, axis=1, keepdims=True))

    if arch.kind == "linear":
        grads = [X.T @ dZ, dZ.sum(axis=0)]
    else:
        _, _, W2, _ = _unpack(arch, params.d, params.C, theta)
        dA = (dZ @ W2.T) * (1.0 - H**2)
        grads = [X.T @ dA, dA.sum(axis=0), H.T @ dZ, dZ.sum(axis=0)]
    return loss, np.concatenate([g.ravel() for g in grads])


def gradient(params: ModelParams, batch, loss_spec: LossSpec) -> np.ndarray:
    return loss_and_gradient(params, batch, loss_spec)[1]


def batch_loss(params: ModelParams, batch, loss_spec: LossSpec) -> float:
    batch = _as_batch(params, batch)
    P = predict_proba(params, batch.X)
    return losses.batch_objective(P, batch.labels, batch.negative, loss_spec)[0]


def check_gradient(params: ModelParams, batch, loss_spec: LossSpec, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences"""
    batch = _as_batch(params, batch)
    analytic = gradient(params, batch, loss_spec)
    numeric = np.zeros_like(analytic)
    theta = params.theta.copy()
    for idx in range(len(theta)):
        theta[idx] += h
        upper = batch_loss(params.with_theta(theta), batch, loss_spec)
        theta[idx] -= 2 * h
        lower = batch_loss(params.with_theta(theta), batch, loss_spec)
        theta[idx] += h
        numeric[idx] = (upper - lower) / (2 * h)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def train_local(
    params: ModelParams,
    batch: Batch,
    epochs: int,
    batch_size: int,
    lr: float,
    loss_spec: LossSpec,
    rng: np.random.Generator,
    schedule_by_epoch: bool = False,
) -> ModelParams:
    """
    Plain mini-batch SGD, reshuffling every epoch. With `schedule_by_epoch` the
    scheduler index advances by one per local epoch starting from loss_spec.t.
    """
    batch = _as_batch(params, batch)
    if len(batch) == 0 or lr == 0 or epochs < 1:
        return params

    X = _check_features(params, batch.X)
    theta = params.theta.copy()
    for epoch in range(epochs):
        spec = loss_spec.at_step(loss_spec.t + epoch) if schedule_by_epoch else loss_spec
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), batch_size):
            rows = order[start : start + batch_size]
            _, grad = _objective(params, theta, X[rows], batch.labels[rows], batch.negative[rows], spec)
            theta -= lr * grad
    return params.with_theta(theta)


def params_to_dict(params: ModelParams) -> dict:
    return {
        "architecture": params.architecture.to_dict(),
        "dim": params.d,
        "num_classes": params.C,
        "theta": [float(value) for value in params.theta],
    }


def params_from_dict(payload: dict) -> ModelParams:
    arch = payload["architecture"]
    return ModelParams(
        Architecture(arch["kind"], arch.get("hidden"), arch.get("activation", "tanh")),
        np.array(payload["theta"], dtype=np.float64),
        int(payload["dim"]),
        int(payload["num_classes"]),
    )


def params_to_json(params: ModelParams) -> str:
    # json emits repr floats, which round-trip doubles exactly
    return json.dumps(params_to_dict(params), sort_keys=True)


def params_from_json(payload: str) -> ModelParams:
    return params_from_dict(json.loads(payload))


def save_params(params: ModelParams, path: Union[str, Path]):
    Path(path).write_text(params_to_json(params) + "\n", encoding="utf-8")


def load_params(path: Union[str, Path]) -> ModelParams:
    return params_from_json(Path(path).read_text(encoding="utf-8"))
