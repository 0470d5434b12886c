"""Gaussian moment constants and the step-size / rate calculators built on them.

H_r(delta) = E[phi'(sigma_K z) z^r] and J_r(delta) = E[phi'(sigma_K z)^2 z^r]
with z ~ N(0, delta^2).  ReLU has closed forms; any other derivative is
integrated numerically.  Derivatives with a jump at 0 use a half-range
Gauss-Hermite rule, which is exact for piecewise polynomials split at 0,
while plain Gauss-Hermite loses about three digits at the jump.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import mpmath
import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ._csvio import write_csv
from .errors import ConfigError, DegenerateActivationError
from .network import Activation
from .synth import RngSeed

SQRT_2PI = math.sqrt(2 * math.pi)
RHO_HEADER = ("delta", "H0", "H1", "H2", "J0", "J2", "rho")

Derivative = Union[Activation, str, Callable[[np.ndarray], np.ndarray]]


def _linear_derivative(z):
    return np.ones_like(np.asarray(z, dtype=float))


def _resolve(activation: Derivative):
    """Return (derivative callable, has a jump at 0, tag)."""
    if callable(activation) and not isinstance(activation, Activation):
        return activation, False, "custom"
    if activation == "linear":
        return _linear_derivative, False, "linear"
    act = Activation(activation)
    return act.derivative, act.kink_at_zero, act.value


@lru_cache(maxsize=None)
def gauss_hermite_rule(n: int):
    """Nodes and weights for E f(Z), Z ~ N(0, 1)."""
    t, w = hermegauss(n)
    return t, w / SQRT_2PI


@lru_cache(maxsize=None)
def half_range_rule(n: int):
    """Gauss rule for the weight exp(-t^2/2)/sqrt(2 pi) on [0, inf).

    Recurrence coefficients come from the Chebyshev algorithm on the raw
    moments in extended precision, then Golub-Welsch in double precision.
    """
    with mpmath.workdps(max(60, 4 * n)):
        mom = [mpmath.power(2, mpmath.mpf(k - 1) / 2) * mpmath.gamma(mpmath.mpf(k + 1) / 2) / mpmath.sqrt(2 * mpmath.pi)
               for k in range(2 * n)]
        alpha = [mom[1] / mom[0]]
        beta = [mom[0]]
        prev = [mpmath.mpf(0)] * (2 * n)
        cur = list(mom)
        for k in range(1, n):
            nxt = [mpmath.mpf(0)] * (2 * n)
            for l in range(k, 2 * n - k):
                nxt[l] = cur[l + 1] - alpha[k - 1] * cur[l] - beta[k - 1] * prev[l]
            alpha.append(nxt[k + 1] / nxt[k] - cur[k] / cur[k - 1])
            beta.append(nxt[k] / cur[k - 1])
            prev, cur = cur, nxt
        a = np.array([float(v) for v in alpha])
        b = np.array([float(mpmath.sqrt(v)) for v in beta[1:]])
    J = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
    nodes, vecs = np.linalg.eigh(J)
    return nodes, float(beta[0]) * vecs[0] ** 2


def gaussian_expectation(f, delta: float, n_nodes: int = 200, split_at_zero: bool = False) -> float:
    """E f(z), z ~ N(0, delta^2), by quadrature."""
    if split_at_zero:
        t, w = half_range_rule(min(n_nodes, 64))
        return float(w @ (f(delta * t) + f(-delta * t)))
    t, w = gauss_hermite_rule(n_nodes)
    return float(w @ f(delta * t))


def _check(r, delta, sigma_K):
    if r not in (0, 1, 2):
        raise ConfigError(f"r must be 0, 1 or 2, got {r}")
    if not delta > 0 or not sigma_K > 0:
        raise ConfigError("delta and sigma_K must be positive")


def _moment(r, delta, sigma_K, activation, power, method, n_nodes):
    _check(r, delta, sigma_K)
    deriv, jump, tag = _resolve(activation)
    if method == "closed":
        if tag == "relu":
            return (0.5, delta / SQRT_2PI, delta**2 / 2)[r]
        if tag == "linear":
            return (1.0, 0.0, delta**2)[r]
        method = "quadrature"
    if method != "quadrature":
        raise ConfigError(f"unknown method {method!r}")
    return gaussian_expectation(lambda z: deriv(sigma_K * z) ** power * z**r, delta, n_nodes, jump)


def moment_H(r: int, delta: float, sigma_K: float = 1.0, activation: Derivative = Activation.RELU,
             method: str = "closed", n_nodes: int = 200) -> float:
    return _moment(r, delta, sigma_K, activation, 1, method, n_nodes)


def moment_J(r: int, delta: float, sigma_K: float = 1.0, activation: Derivative = Activation.RELU,
             method: str = "closed", n_nodes: int = 200) -> float:
    return _moment(r, delta, sigma_K, activation, 2, method, n_nodes)


def _rho_from(H0, H1, H2, J0, J2):
    return min(J0 - H0**2 - H1**2, J2 - H1**2 - H2**2, H0 * H2 - H1**2)


def rho_terms(delta, sigma_K=1.0, activation: Derivative = Activation.RELU, method="closed", n_nodes=200):
    H = [moment_H(r, delta, sigma_K, activation, method, n_nodes) for r in range(3)]
    J0 = moment_J(0, delta, sigma_K, activation, method, n_nodes)
    J2 = moment_J(2, delta, sigma_K, activation, method, n_nodes)
    return (J0 - H[0] ** 2 - H[1] ** 2, J2 - H[1] ** 2 - H[2] ** 2, H[0] * H[2] - H[1] ** 2)


def rho(delta: float, sigma_K: float = 1.0, activation: Derivative = Activation.RELU,
        method: str = "closed", n_nodes: int = 200) -> float:
    return min(rho_terms(delta, sigma_K, activation, method, n_nodes))


def moments_mc(delta, sigma_K=1.0, activation: Derivative = Activation.RELU, n_samples=10**7,
               seed: RngSeed = RngSeed(0), n_blocks=100):
    """Block sums of the five integrands; returns an (n_blocks, 5) array of block means.

    Columns are H0, H1, H2, J0, J2.
    """
    deriv, _, _ = _resolve(activation)
    if n_samples % n_blocks:
        raise ConfigError("n_samples must be a multiple of n_blocks")
    rng = seed.generator()
    per = n_samples // n_blocks
    out = np.empty((n_blocks, 5))
    for b in range(n_blocks):
        z = delta * rng.standard_normal(per)
        g = deriv(sigma_K * z)
        g2 = g * g
        out[b] = [g.mean(), (g * z).mean(), (g * z * z).mean(), g2.mean(), (g2 * z * z).mean()]
    return out


def rho_mc(delta, sigma_K=1.0, activation: Derivative = Activation.RELU, n_samples=10**7,
           seed: RngSeed = RngSeed(0), n_blocks=100):
    """Plug-in Monte Carlo rho with a delete-one-block jackknife standard error."""
    blocks = moments_mc(delta, sigma_K, activation, n_samples, seed, n_blocks)
    full = _rho_from(*blocks.mean(axis=0))
    loo = (blocks.sum(axis=0) - blocks) / (n_blocks - 1)
    reps = np.array([_rho_from(*row) for row in loo])
    se = math.sqrt((n_blocks - 1) / n_blocks * float(((reps - reps.mean()) ** 2).sum()))
    return full, se


def lambda_hat(lam: float, delta: float, delta_tilde: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    a = lam * delta**2
    b = (1 - lam) * delta_tilde**2
    if a + b == 0:
        raise ConfigError("lambda_hat undefined: both weighted variances are zero")
    return a / (a + b)


def mu(delta: float, delta_tilde: float, lam: float, activation: Derivative = Activation.RELU,
       sigma_K: float = 1.0) -> float:
    lt = 1.0 - lam
    num = lam * delta**2 + lt * delta_tilde**2
    den = lam * rho(delta, sigma_K, activation) + (lt * rho(delta_tilde, sigma_K, activation) if lt else 0.0)
    if not den > 0:
        raise DegenerateActivationError(
            f"lambda*rho(delta) + (1-lambda)*rho(delta_tilde) = {den:.6g} is not positive "
            f"(delta={delta}, delta_tilde={delta_tilde}, lambda={lam})")
    return math.sqrt(num / den)


@dataclass(frozen=True)
class SpectrumParams:
    sigma_K: float
    kappa: float
    gamma: float
    K: int
    d: int

    def __post_init__(self):
        if not self.sigma_K > 0:
            raise ConfigError("sigma_K must be positive")
        if self.kappa < 1 or self.gamma < 1:
            raise ConfigError("kappa and gamma must be at least 1")

    @classmethod
    def from_weights(cls, W) -> "SpectrumParams":
        W = np.asarray(W, dtype=float)
        s = np.linalg.svd(W, compute_uv=False)
        sK = float(s[-1])
        if not sK > 0:
            raise ConfigError("weights are rank deficient (sigma_K = 0)")
        gamma = float(np.prod(s / sK))
        return cls(sK, float(s[0] / sK), max(gamma, 1.0), W.shape[1], W.shape[0])


def hessian_bounds(lam: float, delta: float, delta_tilde: float, spectrum: SpectrumParams,
                   activation: Derivative = Activation.RELU):
    lt = 1.0 - lam
    r = lam * rho(delta, spectrum.sigma_K, activation) + (lt * rho(delta_tilde, spectrum.sigma_K, activation) if lt else 0.0)
    K = spectrum.K
    g_min = r / (12 * spectrum.kappa**2 * spectrum.gamma * K**2)
    g_max = 7 * (lam * delta**2 + lt * delta_tilde**2) / K
    return g_min, g_max


def sample_complexity_Nstar(mu_star: float, K: int, d: int, kappa_poly: float = 1.0, log_q: float = 1.0) -> float:
    return kappa_poly * mu_star**2 * K**3 * d * log_q


def predicted_outer_factor(mu: float, K: int, lambda_hat: float, M: int, N: int, kappa_const: float = 1.0) -> float:
    if M < 1 or N < 1:
        raise ConfigError("M and N must be at least 1")
    corr = 1 + kappa_const * lambda_hat / math.sqrt(N) + kappa_const * (1 - lambda_hat) / math.sqrt(M)
    return corr * mu * math.sqrt(K) * (1 - lambda_hat)


@dataclass(frozen=True)
class TheoryBundle:
    H: dict = field(default_factory=dict)
    J: dict = field(default_factory=dict)
    rho: float = float("nan")
    mu: float = float("nan")
    lambda_hat: float = float("nan")
    gamma_min: float = float("nan")
    gamma_max: float = float("nan")
    N_star: float = float("nan")
    predicted_outer_rate: float = float("nan")


def theory_bundle(lam, delta, delta_tilde, spectrum: SpectrumParams, N, M,
                  activation: Derivative = Activation.RELU, kappa_const=1.0, log_q=1.0) -> TheoryBundle:
    """Every calculator at once; mu-dependent fields are NaN when mu is undefined."""
    sK = spectrum.sigma_K
    H = {r: moment_H(r, delta, sK, activation) for r in range(3)}
    J = {r: moment_J(r, delta, sK, activation) for r in range(3)}
    lh = lambda_hat(lam, delta, delta_tilde)
    g_min, g_max = hessian_bounds(lam, delta, delta_tilde, spectrum, activation)
    try:
        m = mu(delta, delta_tilde, lam, activation, sK)
        m_star = mu(delta, delta_tilde, 1.0, activation, sK)
        n_star = sample_complexity_Nstar(m_star, spectrum.K, spectrum.d, kappa_const, log_q)
        rate = predicted_outer_factor(m, spectrum.K, lh, max(M, 1), max(N, 1), kappa_const)
    except DegenerateActivationError:
        m = n_star = rate = float("nan")
    return TheoryBundle(H, J, rho(delta, sK, activation), m, lh, g_min, g_max, n_star, rate)


def rho_grid(deltas, activation: Derivative = Activation.RELU, sigma_K: float = 1.0, method: str = "closed"):
    rows = []
    for dl in deltas:
        H = [moment_H(r, dl, sigma_K, activation, method) for r in range(3)]
        J0 = moment_J(0, dl, sigma_K, activation, method)
        J2 = moment_J(2, dl, sigma_K, activation, method)
        rows.append((float(dl), *H, J0, J2, _rho_from(*H, J0, J2)))
    return rows


def write_rho_grid(rows, path) -> None:
    write_csv(path, RHO_HEADER, rows)
