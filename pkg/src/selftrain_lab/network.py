"""One-hidden-layer networks g(W; x) = (1/K) * sum_j phi(w_j . x)."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ShapeError


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"

    def apply(self, z):
        z = np.asarray(z, dtype=float)
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return expit(z)

    def derivative(self, z):
        """Pointwise derivative; the ReLU derivative at exactly 0 is 0."""
        z = np.asarray(z, dtype=float)
        if self is Activation.RELU:
            return (z > 0).astype(float)
        s = expit(z)
        return s * (1.0 - s)

    __call__ = apply

    @property
    def kink_at_zero(self) -> bool:
        return self is Activation.RELU


@dataclass(frozen=True)
class NetworkModel:
    """Hidden-layer weights (d x K, one column per neuron) plus activation.

    The weight array is copied and marked read-only on construction.
    """

    weights: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"weights must be a non-empty d x K matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def K(self) -> int:
        return self.weights.shape[1]


def preactivations(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    # einsum without BLAS: each output entry is summed in the same order no
    # matter how many rows X has, so batched and single-row results agree bitwise.
    return np.einsum("nd,dk->nk", X, W, optimize=False)


def outputs(W: np.ndarray, X: np.ndarray, activation: Activation) -> np.ndarray:
    return activation.apply(preactivations(W, X)).sum(axis=1) / W.shape[1]


def forward_batch(model: NetworkModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ShapeError(f"expected an n x {model.d} input matrix, got shape {X.shape}")
    return outputs(model.weights, X, model.activation)


def forward(model: NetworkModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.d:
        raise ShapeError(f"expected an input vector of length {model.d}, got shape {x.shape}")
    return float(forward_batch(model, x[None, :])[0])


def activation_derivative(act: Activation, z: float) -> float:
    return float(Activation(act).derivative(z))


def save_weights(model: NetworkModel, path) -> None:
    """Write ``d,K,activation`` then d rows of K values with 17 significant digits."""
    lines = [f"{model.d},{model.K},{model.activation.value}"]
    for row in model.weights:
        lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_weights(path) -> NetworkModel:
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    d, K, act = rows[0].split(",")
    d, K = int(d), int(K)
    W = np.array([[float(v) for v in r.split(",")] for r in rows[1:]], dtype=float)
    if W.shape != (d, K):
        raise ShapeError(f"header says {d}x{K} but file holds {W.shape}")
    return NetworkModel(W, Activation(act))
