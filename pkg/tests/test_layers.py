import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stablecheb.graph import ScaledLaplacianOp, build_graph, cheb_matrices
from stablecheb.layers import (
    ChebLayerParams,
    Dense,
    LayerError,
    ModelConfig,
    ModelSpec,
    cheb_conv_forward,
    effective_weights,
    init_model,
    model_forward,
    stable_cheb_forward,
)

from conftest import path_graph, random_connected_graph


def test_effective_weights_example():
    out = effective_weights(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.1)
    assert np.allclose(out, [[-0.1, -1.0], [1.0, -0.1]])


def test_effective_weights_symmetric_input_vanishes(rng):
    A = rng.standard_normal((4, 4))
    assert not effective_weights(A + A.T, 0.0).any()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)).map(
    lambda s: (s[0], s[0])), elements=st.floats(-1e6, 1e6)))
def test_effective_weights_antisymmetric_bitwise(W):
    E = effective_weights(W, 0.0)
    assert ((E + E.T) == 0).all()


def test_effective_weights_rejects_non_square():
    with pytest.raises(LayerError):
        effective_weights(np.zeros((2, 3)), 0.0)


def _vanilla(W, act="identity"):
    return ChebLayerParams(np.asarray(W, dtype=float), "vanilla", activation=act)


def test_identity_filter(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 6))
    X = rng.standard_normal((6, 3))
    Y, _ = cheb_conv_forward(op, X, _vanilla(np.eye(3)[None]))
    assert np.array_equal(Y, X)


def test_first_order_example():
    op = ScaledLaplacianOp(path_graph(2))
    Y, _ = cheb_conv_forward(op, np.array([[1.0], [0.0]]), _vanilla([[[0.0]], [[1.0]]]))
    assert Y.tolist() == [[0.0], [-1.0]]


def test_vanilla_matches_spectral_filtering(rng):
    for _ in range(10):
        n = int(rng.integers(2, 11))
        op = ScaledLaplacianOp(random_connected_graph(rng, n))
        lam, U = np.linalg.eigh(op.dense())
        K, din, dout = 4, 3, 2
        W = rng.standard_normal((K + 1, din, dout))
        X = rng.standard_normal((n, din))
        Y, _ = cheb_conv_forward(op, X, _vanilla(W))
        Xh = U.T @ X
        ref = sum(U @ (np.polynomial.chebyshev.chebval(lam, np.eye(K + 1)[k])[:, None]
                       * Xh) @ W[k] for k in range(K + 1))
        assert np.abs(Y - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_dimension_mismatch_carries_index():
    op = ScaledLaplacianOp(path_graph(3))
    with pytest.raises(LayerError, match="layer 4"):
        cheb_conv_forward(op, np.zeros((3, 2)), _vanilla(np.zeros((1, 3, 3))), 4)


def test_non_finite_output_raises():
    op = ScaledLaplacianOp(path_graph(3))
    with pytest.raises(LayerError, match="layer 0"), np.errstate(over="ignore"):
        cheb_conv_forward(op, np.full((3, 1), 1e308), _vanilla([[[1e308]]]), 0)


@pytest.mark.parametrize("act", ["identity", "tanh", "relu"])
def test_stable_zero_weights_is_identity(rng, act):
    op = ScaledLaplacianOp(random_connected_graph(rng, 7))
    X = rng.standard_normal((7, 3))
    Y, _ = stable_cheb_forward(op, X, ChebLayerParams(np.zeros((4, 3, 3)), "stable", 0.7,
                                                      0.0, act))
    assert np.array_equal(Y, X)


def test_stable_single_node_rotation():
    op = ScaledLaplacianOp(build_graph([], 1))
    a = np.array([[0.0, 1.0], [-1.0, 0.0]])
    # W - W^T = a for this upper-triangular W
    p = ChebLayerParams(np.array([[[0.0, 1.0], [0.0, 0.0]]]), "stable", 0.3)
    X = np.array([[0.5, -2.0]])
    Y, _ = stable_cheb_forward(op, X, p)
    assert np.allclose(Y, X @ (np.eye(2) + 0.3 * a), atol=1e-15)


@pytest.mark.parametrize("K", [0, 1, 2, 5])
def test_stable_single_node_dissipation(K):
    # isolated="zero" gives the one-node graph L~ = -1, so T_k = (-1)^k
    op = ScaledLaplacianOp(build_graph([], 1), isolated="zero")
    eps, gamma = 0.2, 0.3
    X = np.array([[1.7]])
    Y, _ = stable_cheb_forward(op, X, ChebLayerParams(np.zeros((K + 1, 1, 1)), "stable",
                                                      eps, gamma))
    expect = X * (1 - eps * gamma * sum((-1) ** k for k in range(K + 1)))
    assert np.allclose(Y, expect, atol=1e-15)


@pytest.mark.parametrize("eps", [0.0, -0.1])
def test_stable_rejects_bad_epsilon(eps):
    op = ScaledLaplacianOp(path_graph(2))
    with pytest.raises(LayerError):
        stable_cheb_forward(op, np.zeros((2, 1)), ChebLayerParams(np.zeros((1, 1, 1)),
                                                                   "stable", eps))


def test_stable_requires_square():
    op = ScaledLaplacianOp(path_graph(2))
    with pytest.raises(LayerError):
        stable_cheb_forward(op, np.zeros((2, 2)), ChebLayerParams(np.zeros((1, 2, 3)),
                                                                   "stable", 0.1))


def test_stable_minus_input_is_vanilla_with_effective_weights(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 9))
    W = rng.standard_normal((4, 3, 3))
    X = rng.standard_normal((9, 3))
    Ys, _ = stable_cheb_forward(op, X, ChebLayerParams(W, "stable", 1.0, 0.0))
    eff = np.stack([effective_weights(w, 0.0) for w in W])
    Yv, _ = cheb_conv_forward(op, X, _vanilla(eff))
    assert np.abs((Ys - X) - Yv).max() <= 1e-12


def test_first_order_tied_coefficients_gcn_identity(rng):
    # theta (T_0 - T_1) = theta (I - L~) = theta (I + D^-1/2 A D^-1/2) at lambda_max = 2
    for _ in range(5):
        n = int(rng.integers(2, 11))
        g = random_connected_graph(rng, n)
        op = ScaledLaplacianOp(g)
        theta = rng.standard_normal((2, 2))
        X = rng.standard_normal((n, 2))
        Y, _ = cheb_conv_forward(op, X, _vanilla(np.stack([theta, -theta])))
        d = g.degree.astype(float)
        S = g.adjacency() / np.sqrt(np.outer(d, d))
        assert np.allclose(Y, (np.eye(n) + S) @ X @ theta, atol=1e-12)


def test_forward_with_dense_operator(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 8))
    T = cheb_matrices(op, 3)
    W = rng.standard_normal((4, 2, 2))
    X = rng.standard_normal((8, 2))
    Y, _ = cheb_conv_forward(op, X, _vanilla(W, "tanh"))
    assert np.allclose(Y, np.tanh(sum(T[k] @ X @ W[k] for k in range(4))), atol=1e-12)


def test_graph_mean_of_degenerate_stack(rng):
    g = random_connected_graph(rng, 6)
    X = rng.standard_normal((6, 3))
    model = ModelSpec(Dense.identity(3), [], "graph_mean", [Dense.identity(3)])
    out, _ = model_forward(model, g, X)
    assert np.allclose(out, X.mean(axis=0, keepdims=True))


def test_pass_through_model(rng):
    g = random_connected_graph(rng, 5)
    X = rng.standard_normal((5, 2))
    model = ModelSpec(None, [_vanilla(np.eye(2)[None], "relu")], "node", [])
    out, _ = model_forward(model, g, X)
    assert np.array_equal(out, np.maximum(X, 0))


def test_model_forward_deterministic(rng):
    g = random_connected_graph(rng, 10)
    X = rng.standard_normal((10, 3))
    cfg = ModelConfig(mode="stable", K=4, hidden=5, layers=3, mlp_layers=2)
    a = model_forward(init_model(cfg, 3, 2, np.random.default_rng(7)), g, X)[0]
    b = model_forward(init_model(cfg, 3, 2, np.random.default_rng(7)), g, X)[0]
    assert np.array_equal(a, b)


def test_model_validate_catches_width_mismatch():
    model = ModelSpec(Dense(np.zeros((2, 3)), np.zeros(3)),
                      [_vanilla(np.zeros((1, 4, 4)))], "node", [])
    with pytest.raises(LayerError, match="layer 0"):
        model.validate(2)
