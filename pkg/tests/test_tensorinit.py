import itertools
import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from selftrain_lab.errors import ConditioningError, ConfigError, InsufficientDataError
from selftrain_lab.metrics import relative_error
from selftrain_lab.network import Activation, NetworkModel
from selftrain_lab.synth import GaussianSpec, LabeledSet, RngSeed, make_labeled, sample_ground_truth
from selftrain_lab.tensorinit import (Subspace, estimate_moments, exact_moments, initialize_from_moments,
                                      moment_m1, moment_m2, moment_projected, psi_constants, recover_weights,
                                      symmetry_residual, tensor_initialize, tensor_power_decompose, top_subspace)


def orth_teacher(d=10, K=3, scales=(1.0, 2.0, 3.0), s=1):
    return ortho_group.rvs(d, random_state=s)[:, :K] * np.array(scales)


def test_psi_constants():
    p = psi_constants(Activation.RELU, 1.0, 1)
    assert p.psi1 == 0.5 and p.psi3 == 0.0
    assert psi_constants(delta=2.0).psi1 == 4 * p.psi1
    assert p.psi2 == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert p.psi4 == pytest.approx(-1 / math.sqrt(2 * math.pi))
    with pytest.raises(ConfigError):
        psi_constants(Activation.SIGMOID)


@pytest.mark.parametrize("delta", [1.0, 1.6])
def test_psi_against_monte_carlo(delta):
    # single neurons of different size and direction give the same psi
    rng = np.random.default_rng(0)
    n = 10**6
    for w in ([3.0, 4.0], [-1.0, 0.5]):
        w = np.array(w)
        X = delta * rng.standard_normal((n, 2))
        y = np.maximum(X @ w, 0)
        nw, wb = np.linalg.norm(w), w / np.linalg.norm(w)
        p = psi_constants(Activation.RELU, delta, 1)
        u = X @ wb / delta
        est = {1: y * u * delta, 2: y * (u * u - 1) * delta**2, 3: y * (u**3 - 3 * u) * delta**3,
               4: y * (u**4 - 6 * u**2 + 3) * delta**4}
        for k, v in est.items():
            target = getattr(p, f"psi{k}") * nw
            assert abs(v.mean() - target) < 3 * v.std() / math.sqrt(n) + 1e-12, k


def test_m1_oracle_single_neuron():
    mom, _ = exact_moments(np.array([[3.0], [4.0]]))
    assert np.allclose(mom.m1, [1.5, 2.0], rtol=1e-15)
    rng = np.random.default_rng(1)
    X = rng.standard_normal((10**6, 2))
    y = np.maximum(X @ [3.0, 4.0], 0)
    assert np.abs(moment_m1(X, y) - [1.5, 2.0]).max() < 0.02


def test_zero_teacher_gives_zero_moments():
    X = np.random.default_rng(0).standard_normal((300, 4))
    L = LabeledSet(X, np.zeros(300), GaussianSpec(4))
    mom, _ = estimate_moments(L.subset(range(100)), L.subset(range(100, 200)), L.subset(range(200, 300)), 1.0, 2)
    assert not mom.m1.any() and not mom.m2.any() and not mom.m3_projected.any() and not mom.m4_projected.any()


def test_moment_symmetry_and_subspace():
    Ws = sample_ground_truth(8, 3, seed=RngSeed(0))
    L = make_labeled(NetworkModel(Ws), 3000, GaussianSpec(8), RngSeed(1))
    mom, sub = estimate_moments(L.subset(range(1000)), L.subset(range(1000, 2000)), L.subset(range(2000, 3000)), 1.0, 3)
    assert np.array_equal(mom.m2, mom.m2.T)
    for T in (mom.m3_projected, mom.m4_projected):
        assert all(np.allclose(T, np.transpose(T, p), rtol=0, atol=1e-15) for p in itertools.permutations(range(T.ndim)))
    assert np.abs(sub.basis.T @ sub.basis - np.eye(3)).max() < 1e-10
    with pytest.raises(ConfigError):
        estimate_moments(L, L, L, 1.0, 9)
    with pytest.raises(InsufficientDataError):
        estimate_moments(L.subset([]), L, L, 1.0, 2)


def test_exact_subspace_contains_teacher():
    Ws = sample_ground_truth(10, 3, seed=RngSeed(4))
    _, sub = exact_moments(Ws)
    Wb = Ws / np.linalg.norm(Ws, axis=0)
    assert np.abs(Wb - sub.basis @ (sub.basis.T @ Wb)).max() < 1e-6


def test_power_rank_one():
    v = np.array([0.6, 0.0, 0.8])
    T = 2.0 * np.einsum("i,j,k->ijk", v, v, v)
    dec = tensor_power_decompose(T, n_components=1)
    u, lam = dec.unit_vectors[:, 0], dec.eigenvalues[0]
    s = np.sign(u @ v)
    assert np.abs(u - s * v).max() < 1e-8 and abs(lam - s * 2.0) < 1e-8


def test_power_orthogonal_rank_two():
    Q = ortho_group.rvs(4, random_state=3)
    a, b = Q[:, 0], Q[:, 1]
    T = 3 * np.einsum("i,j,k->ijk", a, a, a) + np.einsum("i,j,k->ijk", b, b, b)
    dec = tensor_power_decompose(T, n_components=2)
    assert abs(dec.eigenvalues[0]) == pytest.approx(3, abs=1e-8)
    assert abs(dec.eigenvalues[1]) == pytest.approx(1, abs=1e-8)
    R = T - sum(l * np.einsum("i,j,k->ijk", u, u, u) for l, u in zip(dec.eigenvalues, dec.unit_vectors.T))
    assert np.linalg.norm(R) < 1e-6 and dec.residual < 1e-4


def test_power_fourth_order_negative():
    Q = ortho_group.rvs(3, random_state=5)
    T = sum(l * np.einsum("i,j,k,l->ijkl", q, q, q, q) for l, q in zip((-3.0, -2.0, -1.0), Q.T))
    dec = tensor_power_decompose(T)
    assert np.allclose(sorted(dec.eigenvalues), [-3, -2, -1], atol=1e-8) and dec.residual < 1e-8
    assert np.allclose(np.linalg.norm(dec.unit_vectors, axis=0), 1, atol=1e-8)


def test_power_zero_and_asymmetric():
    dec = tensor_power_decompose(np.zeros((2, 2, 2)))
    assert np.array_equal(dec.eigenvalues, [0.0, 0.0])
    T = np.zeros((2, 2, 2))
    T[0, 0, 1] = 1.0
    assert symmetry_residual(T) > 0
    with pytest.raises(ConfigError):
        tensor_power_decompose(T)


def test_exact_pipeline_recovers_orthogonal_teacher():
    Ws = orth_teacher()
    mom, sub = exact_moments(Ws)
    rep = initialize_from_moments(mom, sub, 3)
    assert relative_error(rep.weights, Ws) < 1e-6 and np.array_equal(rep.signs, [1.0, 1.0, 1.0])


def test_recover_single_neuron_and_sign_flip():
    w = np.array([[3.0], [4.0], [0.0]])
    mom, sub = exact_moments(w)
    p = psi_constants(Activation.RELU, 1.0, 1)
    r = recover_weights(sub, np.array([[1.0]]), mom.m1, mom.m2, p.psi1, p.psi2)
    assert abs(abs(r.alpha1[0]) - 5.0) < 1e-12 and np.allclose(r.weights, w, atol=1e-12)
    f = recover_weights(sub, np.array([[-1.0]]), mom.m1, mom.m2, p.psi1, p.psi2)
    assert np.array_equal(f.weights, r.weights) and f.signs[0] == -r.signs[0]


def test_recover_conditioning_error():
    sub = Subspace(np.eye(3)[:, :2], np.array([1.0, 1.0, 0.0]))
    U = np.array([[1.0, 1.0], [0.0, 1e-14]])
    U /= np.linalg.norm(U, axis=0)
    with pytest.raises(ConditioningError) as e:
        recover_weights(sub, U, np.ones(3), np.eye(3), 0.5, 0.4)
    assert e.value.condition_number > 1e10


def test_tensor_initialize_determinism_and_errors():
    Ws = sample_ground_truth(10, 3, seed=RngSeed(2))
    L = make_labeled(NetworkModel(Ws), 3000, GaussianSpec(10), RngSeed(3))
    a = tensor_initialize(L, 3, RngSeed(5))
    assert np.array_equal(a, tensor_initialize(L, 3, RngSeed(5)))
    rep = tensor_initialize(L, 3, RngSeed(5), report=True)
    assert set(rep.diagnostics) == {"n_used", "subspace_residual", "decomposition_residual", "condition_number"}
    assert rep.diagnostics["n_used"] == 3000
    with pytest.raises(InsufficientDataError):
        tensor_initialize(L.subset(range(8)), 3)


def test_m1_error_shrinks_with_n():
    w = np.array([[1.0, -0.5], [2.0, 1.0], [0.0, 1.5]])
    m1 = exact_moments(w)[0].m1
    def err(n, s):
        L = make_labeled(NetworkModel(w), n, GaussianSpec(3), RngSeed(s))
        return np.linalg.norm(moment_m1(L.inputs, L.labels) - m1)
    a = np.median([err(2000, s) for s in range(100)])
    b = np.median([err(4000, s) for s in range(100, 200)])
    assert b / a == pytest.approx(1 / math.sqrt(2), rel=0.2)
