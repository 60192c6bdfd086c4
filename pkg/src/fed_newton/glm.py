"""Loss, gradient and Hessian-vector kernels for generalized linear models.

Three families are supported: ridge regression, binary logistic regression
(labels in {-1, +1}) and multinomial logistic regression (labels in 0..C-1).
Curvature is only ever exposed as a Hessian-vector product, so no d x d
matrix is allocated anywhere in this module.

Multinomial parameters are a flat vector of length ``d * C`` laid out
column-major by class: entries ``[c*d:(c+1)*d]`` hold the weights of class c.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContractError",
    "Family",
    "GlmModel",
    "Samples",
    "accuracy",
    "gradient",
    "hvp",
    "loss",
    "predict",
    "sample_losses",
]


class ContractError(ValueError):
    """Raised when an input violates a kernel precondition."""


class Family(str, enum.Enum):
    RIDGE = "ridge"
    LOGISTIC = "logistic"
    MULTINOMIAL = "multinomial"


@dataclass(frozen=True)
class Samples:
    """A block of samples: ``features`` is (D, d), ``labels`` is (D,).

    Labels are stored as float64 for every task; class indices are exact
    small integers.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if features.ndim != 2:
            features = features.reshape(len(labels), -1)
        if features.shape[0] != labels.shape[0]:
            raise ContractError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> "Samples":
        index = np.asarray(index, dtype=np.intp)
        return Samples(self.features[index], self.labels[index])

    @classmethod
    def empty(cls, dim: int) -> "Samples":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def concat(cls, parts) -> "Samples":
        parts = list(parts)
        return cls(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass(frozen=True)
class GlmModel:
    family: Family
    lam: float
    dim: int
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.lam >= 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if self.dim < 1:
            raise ContractError(f"dim must be >= 1, got {self.dim}")
        if self.family is Family.MULTINOMIAL and self.num_classes < 2:
            raise ContractError(f"multinomial needs C >= 2, got {self.num_classes}")

    @property
    def n_params(self) -> int:
        if self.family is Family.MULTINOMIAL:
            return self.dim * self.num_classes
        return self.dim

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def as_matrix(self, w: np.ndarray) -> np.ndarray:
        """View a multinomial parameter vector as a (d, C) weight matrix."""
        return w.reshape(self.num_classes, self.dim).T


def _check(model: GlmModel, shard: Samples, *vectors: np.ndarray) -> None:
    if len(shard) == 0:
        raise ContractError("empty shard")
    if shard.dim != model.dim:
        raise ContractError(f"shard has d={shard.dim}, model expects d={model.dim}")
    for v in vectors:
        if v.shape != (model.n_params,):
            raise ContractError(
                f"vector of shape {v.shape}, expected ({model.n_params},)"
            )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sample_losses(model: GlmModel, shard: Samples, w: np.ndarray) -> np.ndarray:
    """Unregularized per-sample losses l(w, (a_j, y_j))."""
    X, y = shard.features, shard.labels
    if model.family is Family.RIDGE:
        r = X @ w - y
        return 0.5 * r * r
    if model.family is Family.LOGISTIC:
        m = y * (X @ w)
        # log(1 + exp(-m)) without overflow
        return np.maximum(-m, 0.0) + np.log1p(np.exp(-np.abs(m)))
    scores = X @ model.as_matrix(w)
    top = scores.max(axis=1)
    lse = top + np.log(np.exp(scores - top[:, None]).sum(axis=1))
    return lse - scores[np.arange(len(y)), y.astype(np.intp)]


def loss(model: GlmModel, shard: Samples, w: np.ndarray) -> float:
    """Regularized empirical risk of one shard."""
    w = np.asarray(w, dtype=np.float64)
    _check(model, shard, w)
    return float(sample_losses(model, shard, w).mean() + 0.5 * model.lam * (w @ w))


def gradient(model: GlmModel, shard: Samples, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    _check(model, shard, w)
    X, y = shard.features, shard.labels
    D = len(shard)
    if model.family is Family.RIDGE:
        g = X.T @ (X @ w - y) / D
    elif model.family is Family.LOGISTIC:
        m = y * (X @ w)
        g = X.T @ (-y * _sigmoid(-m)) / D
    else:
        p = _softmax(X @ model.as_matrix(w))
        p[np.arange(D), y.astype(np.intp)] -= 1.0
        g = (p.T @ X).reshape(-1) / D
    return g + model.lam * w


def hvp(model: GlmModel, shard: Samples, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian of the shard risk at ``w`` applied to ``v``.

    Each sample contributes ``beta_j * a_j <a_j, v>`` (a C x C block for the
    multinomial family), so one call costs O(D * d) or O(D * d * C).
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check(model, shard, w, v)
    X = shard.features
    D = len(shard)
    if model.family is Family.RIDGE:
        hv = X.T @ (X @ v) / D
    elif model.family is Family.LOGISTIC:
        s = _sigmoid(X @ w)
        beta = s * (1.0 - s)
        hv = X.T @ (beta * (X @ v)) / D
    else:
        p = _softmax(X @ model.as_matrix(w))
        u = X @ model.as_matrix(v)
        # (diag(p) - p p^T) u, row by row
        r = p * u - p * (p * u).sum(axis=1, keepdims=True)
        hv = (r.T @ X).reshape(-1) / D
    return hv + model.lam * v


def predict(model: GlmModel, features: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Point predictions: real values, {-1, +1}, or class indices."""
    if model.family is Family.RIDGE:
        return features @ w
    if model.family is Family.LOGISTIC:
        return np.where(features @ w >= 0, 1.0, -1.0)
    return np.argmax(features @ model.as_matrix(w), axis=1).astype(np.float64)


def accuracy(model: GlmModel, shard: Samples, w: np.ndarray) -> float:
    if model.family is Family.RIDGE:
        raise ContractError("accuracy is undefined for regression")
    if len(shard) == 0:
        raise ContractError("empty shard")
    return float(np.mean(predict(model, shard.features, w) == shard.labels))
