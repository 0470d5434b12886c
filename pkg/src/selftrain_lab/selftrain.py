"""Iterative self-training with heavy-ball mini-batch gradient descent.

Each outer iteration pseudo-labels the unlabeled pool with the current
weights, splits both sets into T disjoint batches and takes one heavy-ball
step per batch.  The momentum state carries over between outer iterations.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._csvio import write_csv
from .errors import ConfigError, DivergenceError, ShapeError
from .metrics import permutation_distance
from .network import Activation, NetworkModel
from .risk import RiskWeights, empirical_gradient, empirical_risk
from .synth import (GaussianSpec, LabeledSet, PseudoLabeledSet, RngSeed, UnlabeledSet,
                    partition_disjoint, pseudo_label, sample_inputs)
from . import theory

TRACE_HEADER = ("outer_iter", "dist_to_wstar", "dist_to_wbar", "risk", "rel_change")


class StopReason(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    beta: float = 0.0
    T: int = 10
    L_max: int = 1000
    rel_tol: float = 1e-4
    weights: RiskWeights = RiskWeights(1.0)
    repartition_each_outer: bool = True
    seed: RngSeed = RngSeed(0)
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if not self.eta > 0 or not math.isfinite(self.eta):
            raise ConfigError(f"eta must be positive and finite, got {self.eta}")
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.T < 1 or self.L_max < 1:
            raise ConfigError("T and L_max must be at least 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")


@dataclass
class TrainTrace:
    """Per outer iteration: distances after the inner loop, risk, relative change.

    ``initial_dist_to_wstar`` is the distance before the first outer iteration.
    """
    outer_iter: list = field(default_factory=list)
    dist_to_wstar: list = field(default_factory=list)
    dist_to_wbar: list = field(default_factory=list)
    risk: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    steps: int = 0
    initial_dist_to_wstar: float = float("nan")
    stop_reason: StopReason | None = None

    def __len__(self):
        return len(self.outer_iter)

    @property
    def distance_sequence(self):
        return [self.initial_dist_to_wstar, *self.dist_to_wstar]

    def rows(self):
        return list(zip(self.outer_iter, self.dist_to_wstar, self.dist_to_wbar, self.risk, self.rel_change))

    def to_csv(self, path) -> None:
        write_csv(path, TRACE_HEADER, self.rows())


def default_lambda(N: int, K: int, d: int) -> float:
    if min(N, K, d) < 1:
        raise ConfigError("N, K and d must be positive")
    return min(1.0, math.sqrt(N / (2 * K * d)))


def theory_step_and_momentum(gamma_min: float, gamma_max: float):
    if not 0 < gamma_min <= gamma_max:
        raise ConfigError(f"need 0 < gamma_min <= gamma_max, got {gamma_min}, {gamma_max}")
    eta = 1.0 / (math.sqrt(gamma_max) + math.sqrt(gamma_min)) ** 2
    beta = (1.0 - math.sqrt(eta * gamma_min)) ** 2
    return eta, beta


def _gn_jacobian(W, X, act):
    # row n holds d g(W; x_n) / d vec(W), vec stacking columns of W
    Z = np.einsum("nd,dk->nk", X, W, optimize=False)
    D = act.derivative(Z) / W.shape[1]
    return (X[:, :, None] * D[:, None, :]).reshape(len(X), -1, order="C")


def _gn(W, X, act):
    J = _gn_jacobian(W, X, act)
    return J.T @ J / len(X)


def measured_curvature(W0, labeled: LabeledSet, unlabeled: UnlabeledSet | None, weights: RiskWeights,
                       T: int, seed: RngSeed, activation=Activation.RELU, mc_factor: int = 8):
    """Curvature range of the weighted risk near W0, from Gauss-Newton matrices.

    gamma_max is the largest eigenvalue over the T batches of a random
    partition, since a step must be stable on every batch.  gamma_min is the
    smallest eigenvalue of the population matrix, estimated with mc_factor*d*K
    fresh Gaussian samples per distribution.
    """
    W0 = np.asarray(W0, dtype=float)
    d, K = W0.shape
    act = Activation(activation)
    lam, lt = weights.lam, weights.lam_tilde
    n_mc = mc_factor * d * K
    G = np.zeros((d * K, d * K))
    if lam > 0:
        G += lam * _gn(W0, sample_inputs(n_mc, labeled.spec, seed.derive("curv", "labeled")), act)
    if lt > 0:
        G += lt * _gn(W0, sample_inputs(n_mc, unlabeled.spec, seed.derive("curv", "unlabeled")), act)
    g_min = float(np.linalg.eigvalsh(G)[0])
    lb = partition_disjoint(len(labeled), T, seed.derive("curv", "part-l")) if lam > 0 else None
    ub = partition_disjoint(len(unlabeled), T, seed.derive("curv", "part-u")) if lt > 0 else None
    g_max = 0.0
    for t in range(T):
        B = np.zeros_like(G)
        if lb is not None:
            B += lam * _gn(W0, labeled.inputs[lb[t]], act)
        if ub is not None:
            B += lt * _gn(W0, unlabeled.inputs[ub[t]], act)
        g_max = max(g_max, float(np.linalg.eigvalsh(B)[-1]))
    return g_min, max(g_max, g_min)


def bound_curvature(W0, weights: RiskWeights, delta: float, delta_tilde: float, activation=Activation.RELU):
    """Closed-form Hessian bounds with spectrum parameters read off W0."""
    spec = theory.SpectrumParams.from_weights(W0)
    return theory.hessian_bounds(weights.lam, delta, delta_tilde, spec, activation)


def choose_step(policy: str, W0, labeled: LabeledSet, unlabeled: UnlabeledSet | None, weights: RiskWeights,
                T: int, seed: RngSeed, heavy_ball: bool = False, activation=Activation.RELU):
    """(eta, beta, gamma_min, gamma_max) for policy "measured" or "bound"."""
    if policy == "measured":
        g_min, g_max = measured_curvature(W0, labeled, unlabeled, weights, T, seed, activation)
    elif policy == "bound":
        dt = unlabeled.spec.std if unlabeled is not None else labeled.spec.std
        g_min, g_max = bound_curvature(W0, weights, labeled.spec.std, dt, activation)
    else:
        raise ConfigError(f"unknown step policy {policy!r}")
    eta, beta = theory_step_and_momentum(g_min, g_max)
    return eta, (beta if heavy_ball else 0.0), g_min, g_max


def inner_loop(W_start, W_prev, labeled_batches, pseudo_batches, cfg: TrainConfig, outer: int | None = None):
    """T heavy-ball steps, batch t at step t.  Returns (W_end, W_second_last)."""
    if len(labeled_batches) != cfg.T or len(pseudo_batches) != cfg.T:
        raise ConfigError(f"expected {cfg.T} batches of each kind")
    W = np.array(W_start, dtype=float)
    Wp = np.array(W_prev, dtype=float)
    for t in range(cfg.T):
        with np.errstate(over="ignore", invalid="ignore"):
            G = empirical_gradient(W, labeled_batches[t], pseudo_batches[t], cfg.weights, cfg.activation)
            W_new = W - cfg.eta * G
            if cfg.beta != 0:
                W_new = W_new + cfg.beta * (W - Wp)
        if not np.all(np.isfinite(W_new)):
            raise DivergenceError(f"non-finite iterate at inner step {t} of outer iteration {outer}",
                                  step=t, outer=outer)
        Wp, W = W, W_new
    return W, Wp


def _check_inputs(W0, labeled, unlabeled, cfg):
    d = W0.shape[0]
    if cfg.weights.lam > 0:
        if labeled is None or labeled.spec.dim != d:
            raise ShapeError("labeled set missing or of the wrong dimension")
        if len(labeled) < cfg.T:
            raise ConfigError(f"need N >= T = {cfg.T} labeled samples, got {len(labeled)}")
    if cfg.weights.lam_tilde > 0:
        if unlabeled is None or unlabeled.spec.dim != d:
            raise ShapeError("unlabeled set missing or of the wrong dimension")
        if len(unlabeled) < cfg.T:
            raise ConfigError(f"need M >= T = {cfg.T} unlabeled samples when lambda_tilde > 0, got {len(unlabeled)}")


def outer_step(W, W_prev, labeled, unlabeled, cfg: TrainConfig, ell: int):
    """One outer iteration.  Returns (W_next, W_prev_next, pseudo set used)."""
    model = NetworkModel(W, cfg.activation)
    key = ell if cfg.repartition_each_outer else 0
    if cfg.weights.lam > 0:
        parts = partition_disjoint(len(labeled), cfg.T, cfg.seed.derive("partition", "labeled", key))
        lb = [labeled.subset(p) for p in parts]
    else:
        lb = [None] * cfg.T
    pseudo = None
    if cfg.weights.lam_tilde > 0:
        pseudo = pseudo_label(model, unlabeled)
        parts = partition_disjoint(len(unlabeled), cfg.T, cfg.seed.derive("partition", "unlabeled", key))
        pb = [pseudo.subset(p) for p in parts]
    else:
        pb = [None] * cfg.T
    W_next, W_prev_next = inner_loop(W, W_prev, lb, pb, cfg, outer=ell)
    return W_next, W_prev_next, pseudo


def self_train(initial, labeled: LabeledSet | None, unlabeled: UnlabeledSet | None, cfg: TrainConfig,
               w_star=None, w_bar=None):
    """Run the outer loop until the relative change drops to rel_tol or L_max is hit."""
    W = np.array(initial, dtype=float)
    _check_inputs(W, labeled, unlabeled, cfg)
    trace = TrainTrace()
    if w_star is not None:
        trace.initial_dist_to_wstar = permutation_distance(W, w_star).value
    W_prev = W.copy()
    for ell in range(cfg.L_max):
        W_next, W_prev, pseudo = outer_step(W, W_prev, labeled, unlabeled, cfg, ell)
        num = float(np.linalg.norm(W_next - W))
        den = float(np.linalg.norm(W))
        rel = num / den if den > 0 else (0.0 if num == 0 else math.inf)
        trace.outer_iter.append(ell + 1)
        trace.dist_to_wstar.append(permutation_distance(W_next, w_star).value if w_star is not None else float("nan"))
        trace.dist_to_wbar.append(permutation_distance(W_next, w_bar).value if w_bar is not None else float("nan"))
        trace.risk.append(empirical_risk(W_next, labeled, pseudo, cfg.weights, cfg.activation))
        trace.rel_change.append(rel)
        trace.steps += cfg.T
        W = W_next
        if rel <= cfg.rel_tol:
            trace.stop_reason = StopReason.CONVERGED
            break
    else:
        trace.stop_reason = StopReason.MAX_ITERATIONS
    return W, trace


def auto_config(W0, labeled: LabeledSet, unlabeled: UnlabeledSet | None, lam: float | None = None,
                policy: str = "measured", heavy_ball: bool = False, seed: RngSeed = RngSeed(0), **kw) -> TrainConfig:
    """TrainConfig with lambda from default_lambda and eta/beta from ``choose_step``.

    With no unlabeled data lambda is forced to 1.
    """
    W0 = np.asarray(W0, dtype=float)
    d, K = W0.shape
    M = 0 if unlabeled is None else len(unlabeled)
    if lam is None:
        lam = default_lambda(len(labeled), K, d)
    if M == 0:
        lam = 1.0
    weights = RiskWeights(lam)
    T = kw.get("T", 10)
    act = kw.get("activation", Activation.RELU)
    eta, beta, _, _ = choose_step(policy, W0, labeled, unlabeled, weights, T, seed.derive("step"), heavy_ball, act)
    return TrainConfig(eta=eta, beta=beta, weights=weights, seed=seed, **kw)


def w_bar(W_star, W0, lam_hat: float):
    """Convex combination lam_hat * W* + (1 - lam_hat) * W0."""
    return lam_hat * np.asarray(W_star, dtype=float) + (1 - lam_hat) * np.asarray(W0, dtype=float)
