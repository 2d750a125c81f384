"""Multi-class softmax regression: stable forward pass, cross-entropy loss,
exact gradients, and the closed-form Lipschitz constant of the gradient with
respect to the data."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import SampleSet
from .errors import ConfigurationError

_PROB_FLOOR = 1e-300
_CHECKPOINT_HEADER = struct.Struct("<qq")


@dataclass(frozen=True)
class ModelParams:
    """Weight matrix of shape (d, C); immutable once constructed."""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ConfigurationError("weights must be a (d, C) matrix")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def zeros(cls, dim: int, num_classes: int) -> "ModelParams":
        return cls(np.zeros((dim, num_classes)))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Batch:
    """Non-empty mini-batch as (b, d) features plus (b,) labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ConfigurationError("batch must be a non-empty (b, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigurationError("batch labels must match batch size")

    def __len__(self) -> int:
        return self.features.shape[0]


def softmax_matrix(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-logit subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_probs(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probability vector for one feature vector."""
    if features.shape != (params.dim,):
        raise ConfigurationError("feature dimension does not match the model")
    logits = features @ params.weights
    return softmax_matrix(logits[None, :])[0]


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_loss(params: ModelParams, batch: Batch) -> float:
    """Mean of -log p_y(x) over the batch; probabilities floored at 1e-300."""
    probs = softmax_matrix(batch.features @ params.weights)
    picked = probs[np.arange(len(batch)), batch.labels]
    return float(-np.log(np.maximum(picked, _PROB_FLOOR)).mean())


def batch_gradient(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean over samples of x^T (P - Y); raw-array core shared with local SGD."""
    probs = softmax_matrix(features @ weights)
    probs[np.arange(features.shape[0]), labels] -= 1.0
    return features.T @ probs / features.shape[0]


def gradient(params: ModelParams, batch: Batch) -> np.ndarray:
    """Exact cross-entropy gradient, shape (d, C)."""
    return batch_gradient(params.weights, batch.features, batch.labels)


def predict(params: ModelParams, features: np.ndarray) -> int:
    """Most probable class; ties break to the lowest index."""
    if features.shape != (params.dim,):
        raise ConfigurationError("feature dimension does not match the model")
    return int(np.argmax(features @ params.weights))


def predict_matrix(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Predicted class per row of an (n, d) matrix (lowest-index tie rule)."""
    return np.argmax(features @ params.weights, axis=1)


def accuracy(params: ModelParams, samples: SampleSet) -> float:
    """Fraction of samples predicted correctly."""
    return float((predict_matrix(params, samples.features) == samples.labels).mean())


def param_l2_norm(params: ModelParams) -> float:
    """Euclidean norm of the flattened weight vector."""
    return float(np.linalg.norm(params.weights))


def data_lipschitz_constant(rho: float) -> float:
    """sqrt(2 + 2*rho + rho^2): Lipschitz constant of the gradient w.r.t. the
    data for softmax regression whose parameter norm is bounded by rho."""
    if rho < 0:
        raise ConfigurationError("rho must be non-negative")
    return math.sqrt(2.0 + 2.0 * rho + rho * rho)


def save_params(path, params: ModelParams) -> None:
    """Write the checkpoint: little-endian int64 (d, C) header, float64 body."""
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_HEADER.pack(params.dim, params.num_classes))
        fh.write(params.weights.astype("<f8").tobytes(order="C"))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = fh.read(_CHECKPOINT_HEADER.size)
        if len(header) != _CHECKPOINT_HEADER.size:
            raise ConfigurationError(f"truncated checkpoint header in {path}")
        dim, num_classes = _CHECKPOINT_HEADER.unpack(header)
        body = fh.read()
    expected = dim * num_classes * 8
    if dim <= 0 or num_classes <= 0 or len(body) != expected:
        raise ConfigurationError(f"corrupt checkpoint body in {path}")
    weights = np.frombuffer(body, dtype="<f8").reshape(dim, num_classes)
    return ModelParams(weights)
