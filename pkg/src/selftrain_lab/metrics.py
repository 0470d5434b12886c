"""Permutation-aligned distances, success rule, 1/sqrt(M) fits, contraction rates."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, ShapeError

SUCCESS_THRESHOLD = 1e-2
RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class AlignedDistance:
    value: float
    permutation: tuple  # column j of A is matched to column permutation[j] of B


@dataclass(frozen=True)
class FitResult:
    intercept: float
    slope: float
    r_squared: float


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    window: tuple  # (first, last) outer indices actually used


def _pair(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape != B.shape:
        raise ShapeError(f"shapes differ: {A.shape} vs {B.shape}")
    return A, B


def _cost(A, B):
    # squared column distances, c[j, k] = ||a_j - b_k||^2
    diff = A[:, :, None] - B[:, None, :]
    return np.einsum("djk,djk->jk", diff, diff)


def _dist(C, perm):
    return math.sqrt(math.fsum(C[j, perm[j]] for j in range(len(perm))))


def permutation_distance(A, B) -> AlignedDistance:
    A, B = _pair(A, B)
    C = _cost(A, B)
    rows, cols = linear_sum_assignment(C)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    return AlignedDistance(_dist(C, perm), perm)


def permutation_distance_exhaustive(A, B) -> AlignedDistance:
    """Brute force over all K! permutations; ties keep the lexicographically first."""
    A, B = _pair(A, B)
    C = _cost(A, B)
    best = None
    for perm in itertools.permutations(range(A.shape[1])):
        v = _dist(C, perm)
        if best is None or v < best.value:
            best = AlignedDistance(v, perm)
    return best


def relative_error(W, W_star) -> float:
    norm = float(np.linalg.norm(np.asarray(W_star, dtype=float)))
    if norm == 0:
        raise ConfigError("ground truth has zero norm")
    return permutation_distance(W, W_star).value / norm


def success(W, W_star, threshold: float = SUCCESS_THRESHOLD) -> bool:
    return relative_error(W, W_star) <= threshold


def fit_inverse_sqrt(points) -> FitResult:
    """OLS of y on 1/sqrt(M).  R^2 is 1 when y has no variance."""
    pts = [(float(m), float(y)) for m, y in points]
    if len(pts) < 2 or len({m for m, _ in pts}) < 2:
        raise ConfigError("need at least two distinct M values")
    if any(m <= 0 for m, _ in pts):
        raise ConfigError("M values must be positive")
    x = np.array([1 / math.sqrt(m) for m, _ in pts])
    y = np.array([v for _, v in pts])
    xc = x - x.mean()
    yc = y - y.mean()
    b = float(xc @ yc / (xc @ xc))
    a = float(y.mean() - b * x.mean())
    sst = float(yc @ yc)
    if sst == 0:
        return FitResult(a, 0.0, 1.0)
    res = y - (a + b * x)
    r2 = 1 - float(res @ res) / sst
    return FitResult(a, b, min(max(r2, 0.0), 1.0))


def convergence_rate(distances, window: int = 50, floor: float = RATE_FLOOR) -> RateEstimate:
    """Geometric mean of e_{l+1}/e_l over the first ``window`` entries.

    ``distances`` may be a sequence or a TrainTrace.  Entries below ``floor``
    end the usable window, since ratios past that point are rounding noise.
    """
    if hasattr(distances, "dist_to_wstar"):
        distances = distances.dist_to_wstar
    e = np.asarray(distances, dtype=float)[:window]
    n = 0
    while n < len(e) and e[n] >= floor and np.isfinite(e[n]):
        n += 1
    if n < 2:
        raise ConfigError("fewer than two usable distance entries")
    logs = np.log(e[1:n]) - np.log(e[: n - 1])
    return RateEstimate(float(np.exp(logs.mean())), (0, n - 1))
