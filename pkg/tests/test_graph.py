import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablecheb.graph import (
    GraphError,
    ScaledLaplacianOp,
    build_graph,
    cheb_basis,
    cheb_matrices,
    cheb_sum,
    disjoint_union,
    estimate_lambda_max,
    normalized_laplacian,
    scaled_laplacian_apply,
)

from conftest import path_graph, random_connected_graph


def test_single_edge():
    g = build_graph([(0, 1)], 2)
    assert g.degree.tolist() == [1, 1]
    assert g.num_edges == 1


def test_dedup_and_self_loops_dropped():
    g = build_graph([(0, 1), (1, 0), (0, 0)], 2)
    assert g.degree.tolist() == [1, 1]
    assert g.edge_list().tolist() == [[0, 1]]


def test_ring_degrees():
    g = build_graph([(i, (i + 1) % 10) for i in range(10)], 10)
    assert (g.degree == 2).all()


@pytest.mark.parametrize("edges,n", [([(0, 2)], 2), ([(-1, 0)], 2), ([], 0)])
def test_construction_errors(edges, n):
    with pytest.raises(GraphError):
        build_graph(edges, n)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 25), st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)),
                                    max_size=80))
def test_graph_invariants(n, pairs):
    edges = [(u % n, v % n) for u, v in pairs]
    g = build_graph(edges, n)
    A = g.adjacency()
    assert (A == A.T).all()
    assert np.diag(A).sum() == 0
    assert A.max(initial=0) <= 1
    assert (g.indices >= 0).all() and (g.indices < n).all()
    assert g.degree.tolist() == [len(g.neighbors(v)) for v in range(n)]


def test_two_node_apply():
    op = ScaledLaplacianOp(path_graph(2), 2.0)
    assert np.allclose(normalized_laplacian(op.graph), [[1, -1], [-1, 1]])
    assert np.allclose(op.dense(), [[0, -1], [-1, 0]])
    out = scaled_laplacian_apply(op, np.array([[1.0], [0.0]]))
    assert out.tolist() == [[0.0], [-1.0]]
    c = np.ones((2, 1))
    assert np.allclose(op.apply(c), -c)


def test_zero_input_gives_zero(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 9))
    assert not op.apply(np.zeros((9, 3))).any()


def test_shape_mismatch():
    op = ScaledLaplacianOp(path_graph(3))
    with pytest.raises(GraphError):
        op.apply(np.zeros((4, 1)))


def test_isolated_node_policies():
    g = build_graph([(0, 1)], 3)
    L = normalized_laplacian(g)
    assert L[2].tolist() == [0.0, 0.0, 1.0]
    single = build_graph([], 1)
    assert ScaledLaplacianOp(single).dense().tolist() == [[0.0]]
    assert ScaledLaplacianOp(single, isolated="zero").dense().tolist() == [[-1.0]]


def test_lambda_max_estimates():
    est = estimate_lambda_max(path_graph(2), tol=1e-10)
    assert est.converged and abs(est.value - 2.0) < 1e-8
    k3 = build_graph([(0, 1), (1, 2), (0, 2)], 3)
    assert abs(estimate_lambda_max(k3).value - 1.5) < 1e-8
    assert estimate_lambda_max(k3, mode="bound").value == 2.0


def test_lambda_max_matches_dense(rng):
    for _ in range(10):
        g = random_connected_graph(rng, int(rng.integers(3, 15)))
        ev = np.linalg.eigvalsh(normalized_laplacian(g))
        est = estimate_lambda_max(g, max_iters=20000, tol=1e-9)
        assert abs(est.value - ev[-1]) < 1e-6 * max(1.0, ev[-1])


def test_lambda_max_nonconvergence_flag():
    # path spectra have a small top gap; two iterations cannot settle
    est = estimate_lambda_max(path_graph(30), max_iters=2, tol=1e-14)
    assert not est.converged and est.iterations == 2
    assert 0 < est.value <= 2.0


def test_basis_examples():
    op = ScaledLaplacianOp(path_graph(2))
    X = np.array([[1.0], [0.0]])
    B = cheb_basis(op, X, 2)
    assert [b.tolist() for b in B] == [[[1.0], [0.0]], [[0.0], [-1.0]], [[1.0], [0.0]]]
    assert cheb_basis(op, X, 0)[0].tolist() == X.tolist()
    with pytest.raises(GraphError):
        cheb_basis(op, X, -1)


def test_basis_matches_spectral_filtering(rng):
    for _ in range(20):
        n = int(rng.integers(2, 21))
        op = ScaledLaplacianOp(random_connected_graph(rng, n),
                               float(rng.uniform(1.5, 2.5)))
        lam, U = np.linalg.eigh(op.dense())
        X = rng.standard_normal((n, 3))
        K = 7
        for k, Bk in enumerate(cheb_basis(op, X, K)):
            tk = np.polynomial.chebyshev.chebval(lam, np.eye(K + 1)[k])
            ref = U @ (tk[:, None] * (U.T @ X))
            assert np.abs(Bk - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_basis_symmetric_in_inner_product(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 12))
    X, Y = rng.standard_normal((2, 12, 2))
    for BX, BY in zip(cheb_basis(op, X, 6), cheb_basis(op, Y, 6)):
        a, b = (BX * Y).sum(), (X * BY).sum()
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_basis_bounded(rng):
    g = random_connected_graph(rng, 15)
    op = ScaledLaplacianOp(g)
    X = rng.standard_normal((15, 2))
    for Bk in cheb_basis(op, X, 10):
        assert np.linalg.norm(Bk) <= np.linalg.norm(X) * np.sqrt(15) + 1e-12


def test_constant_eigenvector_alternates():
    g = build_graph([(i, (i + 1) % 8) for i in range(8)], 8)
    op = ScaledLaplacianOp(g)
    v = np.sqrt(g.degree.astype(float))[:, None]
    for k, Bk in enumerate(cheb_basis(op, v, 6)):
        assert np.allclose(Bk, (-1) ** k * v, atol=1e-12)


def test_cheb_sum_matches_basis_contraction(rng):
    op = ScaledLaplacianOp(random_connected_graph(rng, 11))
    Z = rng.standard_normal((11, 5, 3))
    T = cheb_matrices(op, 4)
    ref = sum(T[k] @ Z[:, k, :] for k in range(5))
    assert np.allclose(cheb_sum(op, Z), ref, atol=1e-12)


def test_cheb_matrices_symmetric(rng):
    T = cheb_matrices(ScaledLaplacianOp(random_connected_graph(rng, 9)), 5)
    assert all((Tk == Tk.T).all() for Tk in T)


def test_disjoint_union_is_block_diagonal(rng):
    gs = [random_connected_graph(rng, n) for n in (3, 5, 4)]
    union, ptr = disjoint_union(gs)
    assert ptr.tolist() == [0, 3, 8, 12]
    A = union.adjacency()
    for g, a, b in zip(gs, ptr[:-1], ptr[1:]):
        assert (A[a:b, a:b] == g.adjacency()).all()
        assert A[a:b, :a].sum() == 0 and A[a:b, b:].sum() == 0
