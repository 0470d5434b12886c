"""Gaussian data, teacher labels, pseudo labels and disjoint mini-batches.

Every sampler is a pure function of its arguments and an :class:`RngSeed`.
Streams for different purposes are derived by hashing, so running trials in
parallel never changes which numbers a trial sees.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._csvio import read_csv, write_csv
from .errors import ConfigError, InsufficientDataError, ShapeError
from .network import Activation, NetworkModel, forward_batch

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSeed:
    master: int
    stream: int = 0

    def __post_init__(self):
        for name in ("master", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {v}")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.master, spawn_key=(self.stream,)))

    def derive(self, *keys) -> "RngSeed":
        """Child seed for ``keys`` (ints or strings), e.g. ``seed.derive("trial", 3)``."""
        h = hashlib.blake2b(digest_size=8)
        h.update(f"{self.master}:{self.stream}".encode())
        for k in keys:
            h.update(b"\x1f" + str(k).encode())
        return RngSeed(self.master, int.from_bytes(h.digest(), "little"))


@dataclass(frozen=True)
class GaussianSpec:
    dim: int
    std: float = 1.0

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if not self.std > 0:
            raise ConfigError(f"std must be positive, got {self.std}")


@dataclass(frozen=True)
class LabeledSet:
    inputs: np.ndarray
    labels: np.ndarray
    spec: GaussianSpec

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.spec.dim:
            raise ShapeError(f"inputs must be n x {self.spec.dim}, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("one label per input row is required")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.inputs[idx], self.labels[idx], self.spec)


@dataclass(frozen=True)
class UnlabeledSet:
    inputs: np.ndarray
    spec: GaussianSpec

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.spec.dim:
            raise ShapeError(f"inputs must be n x {self.spec.dim}, got {self.inputs.shape}")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class PseudoLabeledSet:
    inputs: np.ndarray
    pseudo_labels: np.ndarray
    source_weights_hash: str

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "PseudoLabeledSet":
        return PseudoLabeledSet(self.inputs[idx], self.pseudo_labels[idx], self.source_weights_hash)


def weights_digest(model: NetworkModel) -> str:
    h = hashlib.sha256(model.activation.value.encode())
    h.update(np.ascontiguousarray(model.weights).tobytes())
    return h.hexdigest()


def sample_ground_truth(d: int, K: int, half_range: float = 2.5, seed: RngSeed = RngSeed(0)) -> np.ndarray:
    if d < 1 or K < 1:
        raise ConfigError("d and K must be positive")
    if not half_range > 0:
        raise ConfigError(f"half_range must be positive, got {half_range}")
    return seed.generator().uniform(-half_range, half_range, size=(d, K))


def sample_inputs(n: int, spec: GaussianSpec, seed: RngSeed) -> np.ndarray:
    """n rows from N(0, std^2 I).

    Standard normals are drawn first and then scaled, so specs that differ only
    in ``std`` share randomness, and a smaller ``n`` gives a prefix of a larger one.
    """
    if n < 0:
        raise ConfigError("n must be non-negative")
    return seed.generator().standard_normal((n, spec.dim)) * spec.std


def label_with(teacher: NetworkModel, inputs) -> np.ndarray:
    return forward_batch(teacher, inputs)


def make_labeled(teacher: NetworkModel, n: int, spec: GaussianSpec, seed: RngSeed) -> LabeledSet:
    if spec.dim != teacher.d:
        raise ShapeError("spec dimension does not match the teacher")
    X = sample_inputs(n, spec, seed)
    return LabeledSet(X, label_with(teacher, X), spec)


def make_unlabeled(n: int, spec: GaussianSpec, seed: RngSeed) -> UnlabeledSet:
    return UnlabeledSet(sample_inputs(n, spec, seed), spec)


def pseudo_label(current: NetworkModel, unlabeled: UnlabeledSet) -> PseudoLabeledSet:
    if unlabeled.spec.dim != current.d:
        raise ShapeError("unlabeled inputs do not match the model dimension")
    return PseudoLabeledSet(unlabeled.inputs, forward_batch(current, unlabeled.inputs), weights_digest(current))


def partition_disjoint(n: int, T: int, seed: RngSeed) -> list[np.ndarray]:
    """Chunk a random permutation of range(n) into T blocks of floor(n/T).

    The ``n mod T`` trailing indices of the permutation are left unused.
    """
    if T < 1:
        raise ConfigError("T must be at least 1")
    if n < T:
        raise InsufficientDataError(f"cannot form {T} non-empty disjoint subsets from {n} samples")
    perm = seed.generator().permutation(n)
    size = n // T
    return [perm[t * size:(t + 1) * size] for t in range(T)]


def perturbed_truth(W_star: np.ndarray, radius: float, seed: RngSeed) -> np.ndarray:
    """Uniform draw from {W : ||W - W*||_F <= radius * ||W*||_F}."""
    if not 0 < radius <= 1:
        raise ConfigError(f"radius must lie in (0, 1], got {radius}")
    rng = seed.generator()
    U = rng.standard_normal(W_star.shape)
    r = radius * np.linalg.norm(W_star) * rng.uniform() ** (1.0 / U.size)
    return W_star + U * (r / np.linalg.norm(U))


def _sidecar(path, d, std, n, seed):
    meta = {"d": d, "std": std, "n": n, "seed": None if seed is None else {"master": seed.master, "stream": seed.stream}}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def save_labeled(data: LabeledSet, path, seed: RngSeed | None = None) -> None:
    d = data.spec.dim
    header = [f"x_{i + 1}" for i in range(d)] + ["y"]
    write_csv(path, header, np.column_stack([data.inputs, data.labels]))
    _sidecar(path, d, data.spec.std, len(data), seed)


def save_unlabeled(data: UnlabeledSet, path, seed: RngSeed | None = None) -> None:
    d = data.spec.dim
    write_csv(path, [f"x_{i + 1}" for i in range(d)], data.inputs)
    _sidecar(path, d, data.spec.std, len(data), seed)


def _read_csv(path):
    header, rows = read_csv(path)
    body = np.array([[float(v) for v in r] for r in rows], dtype=float)
    return header, body.reshape(len(rows), len(header))


def _std_from_sidecar(path, default=1.0):
    side = Path(str(path) + ".json")
    if side.exists():
        return float(json.loads(side.read_text(encoding="utf-8"))["std"])
    return default


def load_labeled(path, std: float | None = None) -> LabeledSet:
    header, body = _read_csv(path)
    if header[-1] != "y":
        raise ShapeError("labeled CSV must end with a 'y' column")
    std = _std_from_sidecar(path) if std is None else std
    return LabeledSet(body[:, :-1].copy(), body[:, -1].copy(), GaussianSpec(len(header) - 1, std))


def load_unlabeled(path, std: float | None = None) -> UnlabeledSet:
    header, body = _read_csv(path)
    std = _std_from_sidecar(path) if std is None else std
    return UnlabeledSet(body, GaussianSpec(len(header), std))


__all__ = [
    "Activation", "GaussianSpec", "LabeledSet", "PseudoLabeledSet", "RngSeed", "UnlabeledSet",
    "label_with", "load_labeled", "load_unlabeled", "make_labeled", "make_unlabeled",
    "partition_disjoint", "perturbed_truth", "pseudo_label", "sample_ground_truth",
    "sample_inputs", "save_labeled", "save_unlabeled", "weights_digest",
]
