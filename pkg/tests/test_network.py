import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from selftrain_lab.errors import ShapeError
from selftrain_lab.network import (Activation, NetworkModel, activation_derivative, forward, forward_batch,
                                   load_weights, save_weights)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_forward_examples():
    m = NetworkModel(np.eye(2))
    assert forward(m, [1.0, -2.0]) == 0.5
    assert forward(m, [0.0, 0.0]) == 0.0
    assert forward(NetworkModel([[3.0], [4.0]]), [1.0, 1.0]) == 7.0


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(NetworkModel(np.eye(2)), [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        forward_batch(NetworkModel(np.eye(2)), np.zeros((3, 3)))


def test_forward_batch_examples():
    m = NetworkModel(np.eye(2))
    X = np.array([[1.0, -2.0], [0.0, 0.0]])
    assert np.array_equal(forward_batch(m, X), [0.5, 0.0])
    assert forward_batch(m, np.zeros((0, 2))).shape == (0,)
    assert forward_batch(m, X[:1])[0] == forward(m, X[0])


def test_activation_derivative_examples():
    assert activation_derivative(Activation.RELU, 2.0) == 1.0
    assert activation_derivative(Activation.RELU, 0.0) == 0.0
    assert activation_derivative(Activation.SIGMOID, 0.0) == 0.25
    assert np.isfinite(Activation.SIGMOID.apply(np.array([-800.0, 800.0]))).all()
    assert np.isfinite(Activation.SIGMOID.derivative(np.array([-800.0, 800.0]))).all()


def test_model_is_immutable():
    W = np.eye(2)
    m = NetworkModel(W)
    W[0, 0] = 5.0
    assert m.weights[0, 0] == 1.0
    with pytest.raises(ValueError):
        m.weights[0, 0] = 3.0
    with pytest.raises(ValueError):
        NetworkModel([[np.nan]])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 3), elements=finite), arrays(float, (6, 4), elements=finite))
def test_batch_matches_rows_bitwise(W, X):
    for act in Activation:
        m = NetworkModel(W, act)
        out = forward_batch(m, X)
        assert all(out[i] == forward(m, X[i]) for i in range(len(X)))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 3), elements=finite), arrays(float, 5, elements=finite),
       st.floats(0, 100), st.permutations(range(3)))
def test_homogeneity_permutation_nonnegativity(W, x, c, perm):
    m = NetworkModel(W)
    f = forward(m, x)
    assert f >= 0
    assert forward(m, c * x) == pytest.approx(c * f, rel=1e-9, abs=1e-9)
    assert forward(NetworkModel(W[:, list(perm)]), x) == pytest.approx(f, rel=1e-12, abs=1e-12)


def test_weights_csv_roundtrip(tmp_path, rng):
    W = rng.standard_normal((4, 3)) * 1e3
    p = tmp_path / "w.csv"
    save_weights(NetworkModel(W, Activation.SIGMOID), p)
    text = p.read_bytes()
    assert text.startswith(b"4,3,sigmoid\n") and b"\r" not in text
    back = load_weights(p)
    assert np.array_equal(back.weights, W) and back.activation is Activation.SIGMOID
