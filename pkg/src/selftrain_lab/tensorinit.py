"""Method-of-moments initialization for ReLU teachers.

With y = (1/K) sum_j relu(w_j . x) and x ~ N(0, delta^2 I), the Hermite moments
of y factor over neurons:

    M1 = E[y x]                          = psi1 sum_j |w_j| wbar_j
    M2 = E[y (x x^T - delta^2 I)]        = psi2 sum_j |w_j| wbar_j wbar_j^T
    M3 = E[y He3(x)]                     = psi3 sum_j |w_j| wbar_j^(x3)
    M4 = E[y He4(x)]                     = psi4 sum_j |w_j| wbar_j^(x4)

For ReLU psi3 is exactly zero, so the directions are taken from the
fourth-order moment projected onto the top-K eigenspace of M2.  The
components are only exact tensor eigenvectors when the wbar_j are
orthogonal; no whitening is applied.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConditioningError, ConfigError, InsufficientDataError, ShapeError
from .network import Activation
from .synth import LabeledSet, RngSeed, partition_disjoint

SQRT_2PI = math.sqrt(2 * math.pi)
COND_LIMIT = 1e10


class PsiConstants(NamedTuple):
    psi1: float
    psi2: float
    psi3: float
    psi4: float


def psi_constants(activation=Activation.RELU, delta: float = 1.0, K: int = 1) -> PsiConstants:
    """Per-neuron moment coefficients, including the 1/K output scaling."""
    if Activation(activation) is not Activation.RELU:
        raise ConfigError("psi constants are only available for ReLU")
    if not delta > 0 or K < 1:
        raise ConfigError("delta must be positive and K at least 1")
    return PsiConstants(delta**2 / (2 * K), delta**3 / (K * SQRT_2PI), 0.0, -delta**5 / (K * SQRT_2PI))


@dataclass(frozen=True)
class MomentEstimates:
    m1: np.ndarray
    m2: np.ndarray
    m3_projected: np.ndarray
    m4_projected: np.ndarray
    delta: float


@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray
    eigenvalues: np.ndarray  # of M2, selected K first, then the rest by |value|

    def __post_init__(self):
        B = self.basis
        if np.abs(B.T @ B - np.eye(B.shape[1])).max() > 1e-10:
            raise ShapeError("subspace basis is not orthonormal")

    @property
    def gap_ratio(self) -> float:
        """|lambda_{K+1}| / |lambda_K| of M2; 0 when d == K."""
        K = self.basis.shape[1]
        ev = np.abs(self.eigenvalues)
        if len(ev) <= K or ev[K - 1] == 0:
            return 0.0
        return float(ev[K] / ev[K - 1])


@dataclass(frozen=True)
class DecompResult:
    unit_vectors: np.ndarray  # K x K, one column per component
    eigenvalues: np.ndarray
    residual: float  # ||T - sum lambda_i u_i^(x order)||_F / ||T||_F


@dataclass(frozen=True)
class RecoveryResult:
    weights: np.ndarray
    signs: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    condition_number: float


def _sym_pairings(A, B, order):
    """Sum of A (x) B over the distinct ways to place A's two indices among `order` slots."""
    out = np.zeros(A.shape[:1] * order)
    seen = set()
    for slots in itertools.permutations(range(order)):
        key = (tuple(sorted(slots[:2])), tuple(sorted(slots[2:])))
        if key in seen:
            continue
        seen.add(key)
        out += np.einsum(A if B is None else np.multiply.outer(A, B), range(order), list(slots))
    return out


def symmetrize(T: np.ndarray) -> np.ndarray:
    perms = list(itertools.permutations(range(T.ndim)))
    return sum(np.transpose(T, p) for p in perms) / len(perms)


def symmetry_residual(T: np.ndarray) -> float:
    norm = float(np.linalg.norm(T))
    if norm == 0:
        return 0.0
    return max(float(np.linalg.norm(T - np.transpose(T, p))) for p in itertools.permutations(range(T.ndim))) / norm


def _center(y):
    return y - y.mean()


def moment_m1(X, y) -> np.ndarray:
    return X.T @ _center(y) / len(y)


def moment_m2(X, y, delta: float) -> np.ndarray:
    yc = _center(y)
    m2 = (X.T * yc) @ X / len(y) - delta**2 * yc.mean() * np.eye(X.shape[1])
    return (m2 + m2.T) / 2


def moment_projected(X, y, V, delta: float, order: int) -> np.ndarray:
    """E[y He_order(V^T x)] with the labels centered, then symmetrized."""
    yc = _center(y)
    n = len(y)
    Z = X @ V
    K = V.shape[1]
    I = np.eye(K)
    s1 = Z.T @ yc / n
    s2 = (Z.T * yc) @ Z / n
    if order == 3:
        raw = np.einsum("n,ni,nj,nk->ijk", yc, Z, Z, Z) / n
        corr = sum(np.einsum(np.multiply.outer(s1, I), [0, 1, 2], list(p))
                   for p in ((0, 1, 2), (1, 0, 2), (2, 0, 1)))
        T = raw - delta**2 * corr
    elif order == 4:
        raw = np.einsum("n,ni,nj,nk,nl->ijkl", yc, Z, Z, Z, Z) / n
        T = raw - delta**2 * _sym_pairings(s2, I, 4) + delta**4 * yc.mean() * _sym_pairings(I, I, 4)
    else:
        raise ConfigError("order must be 3 or 4")
    return symmetrize(T)


def top_subspace(m2: np.ndarray, K: int) -> Subspace:
    ev, vecs = np.linalg.eigh(m2)
    order = np.argsort(-np.abs(ev), kind="stable")
    basis = vecs[:, order[:K]]
    # fix column signs so the largest-magnitude entry is positive
    flip = np.sign(basis[np.abs(basis).argmax(axis=0), range(K)])
    flip[flip == 0] = 1
    return Subspace(basis * flip, ev[order])


def estimate_moments(D1: LabeledSet, D2: LabeledSet, D3: LabeledSet, delta: float, K: int, order: int = 4):
    d = D1.spec.dim
    if K > d:
        raise ConfigError(f"K = {K} exceeds d = {d}")
    if min(len(D1), len(D2), len(D3)) == 0:
        raise InsufficientDataError("every split must be non-empty")
    m1 = moment_m1(D1.inputs, D1.labels)
    m2 = moment_m2(D2.inputs, D2.labels, delta)
    sub = top_subspace(m2, K)
    m3 = moment_projected(D3.inputs, D3.labels, sub.basis, delta, 3)
    m4 = moment_projected(D3.inputs, D3.labels, sub.basis, delta, 4) if order == 4 else np.zeros((K,) * 4)
    return MomentEstimates(m1, m2, m3, m4, delta), sub


def exact_moments(W_star, delta: float = 1.0):
    """Population moments of a ReLU teacher, from the psi coefficients.

    The projected tensors are built on the subspace of the exact M2.
    """
    W_star = np.asarray(W_star, dtype=float)
    d, K = W_star.shape
    psi = psi_constants(Activation.RELU, delta, K)
    norms = np.linalg.norm(W_star, axis=0)
    Wb = W_star / norms
    m1 = psi.psi1 * Wb @ norms
    m2 = psi.psi2 * (Wb * norms) @ Wb.T
    m2 = (m2 + m2.T) / 2
    sub = top_subspace(m2, K)
    P = sub.basis.T @ Wb
    m3 = psi.psi3 * np.einsum("j,ij,kj,lj->ikl", norms, P, P, P)
    m4 = psi.psi4 * np.einsum("j,ij,kj,lj,mj->iklm", norms, P, P, P, P)
    return MomentEstimates(m1, m2, symmetrize(m3), symmetrize(m4), delta), sub


def _contract(T, u, times):
    v = T
    for _ in range(times):
        v = v @ u
    return v


def _rank1(u, order):
    t = u
    for _ in range(order - 1):
        t = np.multiply.outer(t, u)
    return t


def tensor_power_decompose(tensor, n_restarts: int = 20, n_iters: int = 100, tol: float = 1e-10,
                           seed: RngSeed = RngSeed(0), n_components: int | None = None) -> DecompResult:
    """Robust power iteration with deflation for symmetric order-3 or order-4 tensors.

    Each component keeps the restart with the largest |T(u, ..., u)|, ties
    going to the earlier restart.  For even order the iterate's sign is
    aligned with the previous one, so negative eigenvalues do not oscillate.
    """
    T = np.array(tensor, dtype=float)
    order = T.ndim
    if order not in (3, 4) or len(set(T.shape)) != 1:
        raise ShapeError("tensor must be cubical of order 3 or 4")
    res = symmetry_residual(T)
    if res > 1e-8:
        raise ConfigError(f"tensor is not symmetric (residual {res:.3g})")
    K = T.shape[0]
    n_comp = K if n_components is None else n_components
    rng = seed.generator()
    orig_norm = float(np.linalg.norm(T))
    vecs, vals = [], []
    R = T.copy()
    for _ in range(n_comp):
        best = None
        for _r in range(n_restarts):
            u = rng.standard_normal(K)
            u /= np.linalg.norm(u)
            for _i in range(n_iters):
                v = _contract(R, u, order - 1)
                nv = np.linalg.norm(v)
                if nv == 0:
                    break
                un = v / nv
                if order % 2 == 0 and un @ u < 0:
                    un = -un
                done = np.linalg.norm(un - u) < tol
                u = un
                if done:
                    break
            val = float(_contract(R, u, order))
            if best is None or abs(val) > abs(best[1]):
                best = (u, val)
        u, val = best
        vecs.append(u)
        vals.append(val)
        R = R - val * _rank1(u, order)
    resid = float(np.linalg.norm(R)) / orig_norm if orig_norm > 0 else 0.0
    return DecompResult(np.column_stack(vecs), np.array(vals), resid)


def recover_weights(subspace: Subspace, unit_vectors, m1, m2, psi1: float, psi2: float) -> RecoveryResult:
    V = subspace.basis
    U = np.asarray(unit_vectors, dtype=float)
    if U.shape != (V.shape[1], V.shape[1]):
        raise ShapeError("need K unit vectors of length K")
    Wb = V @ U
    A1 = psi1 * Wb
    A2 = np.stack([psi2 * np.outer(w, w).ravel() for w in Wb.T], axis=1)
    cond = float(max(np.linalg.cond(A1), np.linalg.cond(A2)))
    if not cond < COND_LIMIT:
        raise ConditioningError(f"least-squares design is ill conditioned (cond {cond:.3g})", cond)
    a1 = np.linalg.lstsq(A1, m1, rcond=None)[0]
    a2 = np.linalg.lstsq(A2, np.asarray(m2).ravel(), rcond=None)[0]
    s2 = np.where(a2 >= 0, 1.0, -1.0)
    signs = np.where(a1 * s2 >= 0, 1.0, -1.0)
    return RecoveryResult(Wb * (s2 * a1), signs, a1, a2, cond)


@dataclass(frozen=True)
class InitReport:
    weights: np.ndarray
    signs: np.ndarray
    moments: MomentEstimates
    subspace: Subspace
    decomposition: DecompResult
    diagnostics: dict = field(default_factory=dict)


def initialize_from_moments(moments: MomentEstimates, subspace: Subspace, K: int, seed: RngSeed = RngSeed(0),
                            order: int = 4, n_restarts: int = 20, n_iters: int = 100, tol: float = 1e-10,
                            n_used: int = 0) -> InitReport:
    psi = psi_constants(Activation.RELU, moments.delta, K)
    tensor = moments.m4_projected if order == 4 else moments.m3_projected
    dec = tensor_power_decompose(tensor, n_restarts, n_iters, tol, seed)
    rec = recover_weights(subspace, dec.unit_vectors, moments.m1, moments.m2, psi.psi1, psi.psi2)
    if order % 2 == 0 and np.any(rec.signs < 0):
        # an even-order tensor does not fix the orientation of u_j; pick the
        # one with sign(alpha1 / alpha2) = +1 (the output column is unchanged)
        U = dec.unit_vectors * rec.signs
        dec = DecompResult(U, dec.eigenvalues, dec.residual)
        rec = recover_weights(subspace, U, moments.m1, moments.m2, psi.psi1, psi.psi2)
    diag = {"n_used": int(n_used), "subspace_residual": subspace.gap_ratio,
            "decomposition_residual": dec.residual, "condition_number": rec.condition_number}
    return InitReport(rec.weights, rec.signs, moments, subspace, dec, diag)


def tensor_initialize(labeled: LabeledSet, K: int, seed: RngSeed = RngSeed(0), order: int = 4,
                      report: bool = False, **kw):
    """Split D in three, estimate moments, decompose, recover.  Returns W0 (or an InitReport)."""
    N = len(labeled)
    if N < 3 * K:
        raise InsufficientDataError(f"need N >= 3K = {3 * K} labeled samples, got {N}")
    parts = partition_disjoint(N, 3, seed.derive("init", "split"))
    D1, D2, D3 = (labeled.subset(np.sort(p)) for p in parts)
    mom, sub = estimate_moments(D1, D2, D3, labeled.spec.std, K, order)
    rep = initialize_from_moments(mom, sub, K, seed.derive("init", "power"), order, n_used=3 * (N // 3), **kw)
    return rep if report else rep.weights
