"""The numba kernels and the numpy fallbacks must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablecheb import _kernels
from stablecheb.datasets import oracle_apsp
from stablecheb.graph import ScaledLaplacianOp, build_graph

pytestmark = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")

NB = _kernels.IMPLEMENTATIONS["numba"]
NP = _kernels.IMPLEMENTATIONS["numpy"]


def _graph(n, pairs):
    # leaves some nodes isolated on purpose
    return build_graph([(u % n, v % n) for u, v in pairs], n)


graphs = st.builds(_graph, st.integers(1, 30),
                   st.lists(st.tuples(st.integers(0, 99), st.integers(0, 99)), max_size=90))


@settings(max_examples=60, deadline=None)
@given(graphs, st.integers(0, 6), st.integers(1, 4), st.sampled_from(["identity", "zero"]),
       st.integers(0, 2 ** 32 - 1))
def test_backends_agree(g, K, d, policy, seed):
    rng = np.random.default_rng(seed)
    op = ScaledLaplacianOp(g, float(rng.uniform(1.0, 3.0)), policy)
    csr = (g.indptr, g.indices, op.weights, op.diag, op.scale)
    X = rng.standard_normal((g.num_nodes, d))
    Z = rng.standard_normal((g.num_nodes, K + 1, d))
    a = NB["scaled_apply"](*csr, X, np.empty_like(X))
    b = NP["scaled_apply"](*csr, X, np.empty_like(X))
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    assert np.allclose(NB["cheb_basis"](*csr, X, K), NP["cheb_basis"](*csr, X, K),
                       rtol=1e-12, atol=1e-12)
    assert np.allclose(NB["cheb_sum"](*csr, Z), NP["cheb_sum"](*csr, Z),
                       rtol=1e-12, atol=1e-12)
    assert (NB["bfs_all_pairs"](g.indptr, g.indices, g.num_nodes)
            == NP["bfs_all_pairs"](g.indptr, g.indices, g.num_nodes)).all()


def test_basis_does_not_touch_input():
    g = build_graph([(0, 1), (1, 2)], 3)
    op = ScaledLaplacianOp(g)
    X = np.arange(6.0).reshape(3, 2)
    keep = X.copy()
    for impl in (NB, NP):
        impl["cheb_basis"](g.indptr, g.indices, op.weights, op.diag, op.scale, X, 4)
        assert (X == keep).all()


def test_bfs_against_floyd_warshall(rng):
    for _ in range(10):
        n = int(rng.integers(2, 31))
        g = _graph(n, rng.integers(0, 100, size=(2 * n, 2)).tolist())
        D = np.where(g.adjacency() > 0, 1.0, np.inf)
        np.fill_diagonal(D, 0.0)
        for k in range(n):
            D = np.minimum(D, D[:, [k]] + D[[k], :])
        ref = np.where(np.isinf(D), -1, D).astype(np.int64)
        for impl in (NB, NP):
            assert (impl["bfs_all_pairs"](g.indptr, g.indices, n) == ref).all()
        if (ref >= 0).all():
            assert (oracle_apsp(g).distances == ref).all()


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_env_flag_selects_backend(backend):
    env = dict(os.environ, STABLECHEB_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", "import stablecheb; print(stablecheb.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == backend
