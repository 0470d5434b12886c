"""Weighted squared-error risk, its gradient, and the generalization function.

The population quantities are estimated by Monte Carlo.  For ReLU the
generalization function also has a closed form through the degree-1
arc-cosine kernel, which serves as an oracle for the estimator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._csvio import write_csv
from .errors import ConfigError, ShapeError
from .network import Activation, NetworkModel, outputs, preactivations
from .synth import GaussianSpec, LabeledSet, PseudoLabeledSet, RngSeed, sample_inputs


@dataclass(frozen=True)
class RiskWeights:
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def lam_tilde(self) -> float:
        return 1.0 - self.lam


@dataclass(frozen=True)
class McSpec:
    n_samples: int
    seed: RngSeed = RngSeed(0)

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ConfigError("n_samples must be at least 1")


def _unpack(W, activation):
    if isinstance(W, NetworkModel):
        return W.weights, W.activation
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ShapeError(f"weights must be a d x K matrix, got shape {W.shape}")
    return W, Activation(activation)


def _terms(labeled, pseudo, weights, d):
    """(weight, X, y) for each active part of the risk."""
    out = []
    if weights.lam > 0:
        if labeled is None or len(labeled) == 0:
            raise ConfigError("labeled set is empty but lambda > 0")
        out.append((weights.lam, labeled.inputs, labeled.labels))
    if weights.lam_tilde > 0:
        if pseudo is None or len(pseudo) == 0:
            raise ConfigError("pseudo-labeled set is empty but lambda_tilde > 0")
        out.append((weights.lam_tilde, pseudo.inputs, pseudo.pseudo_labels))
    for _, X, _ in out:
        if X.shape[1] != d:
            raise ShapeError(f"inputs have width {X.shape[1]}, weights expect {d}")
    return out


def empirical_risk(W, labeled: LabeledSet | None, pseudo: PseudoLabeledSet | None,
                   weights: RiskWeights, activation=Activation.RELU) -> float:
    W, act = _unpack(W, activation)
    total = 0.0
    for c, X, y in _terms(labeled, pseudo, weights, W.shape[0]):
        r = y - outputs(W, X, act)
        total += c * float(r @ r) / (2 * len(y))
    return total


def empirical_gradient(W, labeled: LabeledSet | None, pseudo: PseudoLabeledSet | None,
                       weights: RiskWeights, activation=Activation.RELU) -> np.ndarray:
    """d x K gradient; column k is c/(K n) * sum_i (g_i - y_i) phi'(w_k . x_i) x_i per part."""
    W, act = _unpack(W, activation)
    d, K = W.shape
    G = np.zeros((d, K))
    for c, X, y in _terms(labeled, pseudo, weights, d):
        Z = preactivations(W, X)
        r = act.apply(Z).sum(axis=1) / K - y
        G += (c / (K * len(y))) * (X.T @ (act.derivative(Z) * r[:, None]))
    return G


def _mc_parts(W, target, labeled_spec, unlabeled_spec, weights, mc, act):
    W, act = _unpack(W, act)
    T, _ = _unpack(target, act)
    if T.shape != W.shape:
        raise ShapeError("target and W must have the same shape")
    parts = []
    for c, spec, tag in ((weights.lam, labeled_spec, "labeled"), (weights.lam_tilde, unlabeled_spec, "unlabeled")):
        if c == 0:
            continue
        if spec.dim != W.shape[0]:
            raise ShapeError("spec dimension does not match the weights")
        X = sample_inputs(int(mc.n_samples), spec, mc.seed.derive("mc", tag))
        r = outputs(T, X, act) - outputs(W, X, act)
        parts.append(0.5 * c * r * r)
    return parts


def population_risk_mc_se(W, target, labeled_spec: GaussianSpec, unlabeled_spec: GaussianSpec,
                          weights: RiskWeights, mc: McSpec, activation=Activation.RELU):
    """Monte Carlo estimate and its standard error.

    The two parts use independent streams, and a larger ``n_samples`` extends
    the same draws, so estimates at growing sizes are nested.
    """
    parts = _mc_parts(W, target, labeled_spec, unlabeled_spec, weights, mc, activation)
    n = int(mc.n_samples)
    est = sum(float(p.mean()) for p in parts)
    var = sum(float(p.var(ddof=1)) / n for p in parts) if n > 1 else float("nan")
    return est, math.sqrt(var)


def population_risk_mc(W, target, labeled_spec: GaussianSpec, unlabeled_spec: GaussianSpec,
                       weights: RiskWeights, mc: McSpec, activation=Activation.RELU) -> float:
    parts = _mc_parts(W, target, labeled_spec, unlabeled_spec, weights, mc, activation)
    return sum(float(p.mean()) for p in parts)


def arccos_kernel(A, B, delta: float = 1.0) -> np.ndarray:
    """E[relu(a.x) relu(b.x)] for x ~ N(0, delta^2 I), for every column pair of A and B.

    Columns with zero norm give 0.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    # axis-0 reductions add rows in order, so each entry is independent of
    # where its column sits and permuting columns permutes entries exactly
    na = np.sqrt((A * A).sum(axis=0))
    nb = np.sqrt((B * B).sum(axis=0))
    dots = (A[:, :, None] * B[:, None, :]).sum(axis=0)
    scale = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.clip(np.where(scale > 0, dots / scale, 1.0), -1.0, 1.0)
    theta = np.arccos(cos)
    return delta**2 * scale / (2 * np.pi) * (np.sin(theta) + (np.pi - theta) * cos)


def generalization_fn_closed(W, W_star, delta: float = 1.0) -> float:
    """Population squared error E(g(W*;x) - g(W;x))^2 for ReLU, x ~ N(0, delta^2 I)."""
    W = np.asarray(W, dtype=float)
    Ws = np.asarray(W_star, dtype=float)
    if W.shape != Ws.shape:
        raise ShapeError("W and W_star must have the same shape")
    if not delta > 0:
        raise ConfigError("delta must be positive")
    K = W.shape[1]
    # fsum is exactly rounded, so column order cannot change the result
    s = (math.fsum(arccos_kernel(W, W, delta).ravel())
         - 2 * math.fsum(arccos_kernel(W, Ws, delta).ravel())
         + math.fsum(arccos_kernel(Ws, Ws, delta).ravel()))
    return max(s, 0.0) / K**2


def gf_vs_distance_scan(W_star, radii, trials_per_radius: int = 100, mode: str = "closed",
                        seed: RngSeed = RngSeed(0), delta: float = 1.0, mc_samples: int = 20000):
    """GF along random directions at each relative radius r (||U||_F = r ||W*||_F).

    Returns rows (distance, gf_normalized, gf_raw_mean, gf_raw_std), with the
    mean column divided by its largest value.
    """
    W_star = np.asarray(W_star, dtype=float)
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii) or radii != sorted(radii):
        raise ConfigError("radii must be non-negative and sorted")
    if mode not in ("closed", "mc"):
        raise ConfigError(f"unknown GF mode {mode!r}")
    scale = float(np.linalg.norm(W_star))
    spec = GaussianSpec(W_star.shape[0], delta)
    means, stds = [], []
    for i, r in enumerate(radii):
        vals = []
        for t in range(trials_per_radius):
            s = seed.derive("gf-scan", i, t)
            U = s.generator().standard_normal(W_star.shape)
            W = W_star + U * (r * scale / np.linalg.norm(U))
            if mode == "closed":
                vals.append(generalization_fn_closed(W, W_star, delta))
            else:
                vals.append(population_risk_mc(W, W_star, spec, spec, RiskWeights(1.0),
                                               McSpec(mc_samples, s.derive("mc"))) * 2.0)
        means.append(float(np.mean(vals)))
        stds.append(float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
    top = max(means) if means else 0.0
    return [(r * scale, m / top if top > 0 else 0.0, m, sd) for r, m, sd in zip(radii, means, stds)]


GF_SCAN_HEADER = ("distance", "gf_normalized", "gf_raw_mean", "gf_raw_std")


def write_gf_scan(rows, path) -> None:
    write_csv(path, GF_SCAN_HEADER, rows)
