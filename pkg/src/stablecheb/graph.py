"""Graph storage, the scaled normalized Laplacian and the Chebyshev basis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels


class GraphError(ValueError):
    """Raised for malformed graphs or operator misuse."""


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Undirected, unweighted, self-loop-free graph in CSR form.

    ``indices[indptr[v]:indptr[v+1]]`` is the sorted neighbour list of ``v``.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.indices.shape[0] // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def edge_list(self) -> np.ndarray:
        """Edges as an ``(m, 2)`` array with ``u < v``, sorted lexicographically."""
        rows = np.repeat(np.arange(self.num_nodes), self.degree)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), self.degree)
        A[rows, self.indices] = 1.0
        return A


def build_graph(edge_list: Iterable[Sequence[int]], num_nodes: int) -> SparseGraph:
    """Deduplicate, symmetrize and drop self-loops, then pack into CSR."""
    n = int(num_nodes)
    if n <= 0:
        raise GraphError(f"num_nodes must be positive, got {num_nodes}")
    edges = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                       dtype=np.int64)
    if edges.size == 0:
        edges = edges.reshape(0, 2)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise GraphError("edge_list must be a sequence of (u, v) pairs")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = edges[(edges < 0).any(axis=1) | (edges >= n).any(axis=1)][0]
        raise GraphError(f"edge {tuple(int(x) for x in bad)} out of range for {n} nodes")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    codes = np.unique(both[:, 0] * n + both[:, 1])
    rows, cols = np.divmod(codes, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return SparseGraph(n, indptr, cols.astype(np.int64))


def disjoint_union(graphs: Sequence[SparseGraph]) -> tuple[SparseGraph, np.ndarray]:
    """Block-diagonal union of ``graphs``; also returns node offsets (len G+1)."""
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    ptr = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    nnz = np.array([g.indices.shape[0] for g in graphs], dtype=np.int64)
    nnz_ptr = np.concatenate([[0], np.cumsum(nnz)])
    indices = np.concatenate([g.indices + off for g, off in zip(graphs, ptr[:-1])])
    indptr = np.concatenate(
        [[0]] + [g.indptr[1:] + base for g, base in zip(graphs, nnz_ptr[:-1])]
    ).astype(np.int64)
    return SparseGraph(int(ptr[-1]), indptr, indices.astype(np.int64)), ptr


@dataclass(eq=False)
class ScaledLaplacianOp:
    """``L~ = 2 L / lambda_max - I`` with ``L = I - D^-1/2 A D^-1/2``.

    ``isolated`` fixes the Laplacian row of a degree-0 node: ``"identity"``
    (the default, normalized-adjacency row is zero so ``L_vv = 1``) or
    ``"zero"`` (``L_vv = 0``, the single-node graph then has eigenvalue 0).
    """

    graph: SparseGraph
    lambda_max: float = 2.0
    isolated: str = "identity"
    weights: np.ndarray = field(init=False, repr=False)
    diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.lambda_max) or self.lambda_max <= 0:
            raise GraphError(f"lambda_max must be positive, got {self.lambda_max}")
        if self.isolated not in ("identity", "zero"):
            raise GraphError(f"unknown isolated-node policy {self.isolated!r}")
        g = self.graph
        deg = g.degree.astype(float)
        rows = np.repeat(np.arange(g.num_nodes), g.degree)
        # the product is commutative, so w_uv and w_vu are bitwise equal
        self.weights = 1.0 / np.sqrt(deg[rows] * deg[g.indices])
        self.diag = np.ones(g.num_nodes)
        if self.isolated == "zero":
            self.diag[deg == 0] = 0.0

    @property
    def scale(self) -> float:
        return 2.0 / self.lambda_max

    @property
    def n(self) -> int:
        return self.graph.num_nodes

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.n:
            raise GraphError(f"expected an array with {self.n} rows, got shape {X.shape}")
        return X

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(self._check(X))
        out = np.empty_like(X)
        g = self.graph
        return _kernels.scaled_apply(g.indptr, g.indices, self.weights, self.diag,
                                     self.scale, X, out)

    def dense(self) -> np.ndarray:
        """Dense ``L~`` (for small graphs and oracles)."""
        n = self.n
        S = np.zeros((n, n))
        rows = np.repeat(np.arange(n), self.graph.degree)
        S[rows, self.graph.indices] = self.weights
        return self.scale * (np.diag(self.diag) - S) - np.eye(n)


def scaled_laplacian_apply(op: ScaledLaplacianOp, X: np.ndarray) -> np.ndarray:
    return op.apply(X)


def normalized_laplacian(graph: SparseGraph, isolated: str = "identity") -> np.ndarray:
    """Dense symmetric normalized Laplacian."""
    return ScaledLaplacianOp(graph, 2.0, isolated).dense() + np.eye(graph.num_nodes)


@dataclass(frozen=True)
class LambdaMaxEstimate:
    value: float
    converged: bool
    iterations: int


def estimate_lambda_max(graph: SparseGraph, max_iters: int = 1000, tol: float = 1e-10,
                        mode: str = "power") -> LambdaMaxEstimate:
    """Largest eigenvalue of the normalized Laplacian.

    ``mode="bound"`` returns the analytic ceiling 2.  ``mode="power"`` runs power
    iteration from a fixed pseudo-random start and stops when the residual
    ``||Lx - rho x||`` drops below ``tol``.
    """
    if mode == "bound":
        return LambdaMaxEstimate(2.0, True, 0)
    if mode != "power":
        raise GraphError(f"unknown lambda_max mode {mode!r}")
    n = graph.num_nodes
    # L = L~ + I at lambda_max = 2
    op = ScaledLaplacianOp(graph, 2.0)
    x = np.random.default_rng(0).standard_normal((n, 1))
    x /= np.linalg.norm(x)
    rho = 0.0
    for it in range(1, max_iters + 1):
        y = op.apply(x) + x
        rho = float((x * y).sum())
        res = np.linalg.norm(y - rho * x)
        if res <= tol:
            return LambdaMaxEstimate(rho, True, it)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return LambdaMaxEstimate(max(rho, 0.0), True, it)
        x = y / ny
    return LambdaMaxEstimate(rho, False, max_iters)


def cheb_basis_array(op: ScaledLaplacianOp, X: np.ndarray, K: int) -> np.ndarray:
    """``T_k(L~) X`` for ``k = 0..K`` stacked as an ``(n, K+1, d)`` array."""
    if K < 0:
        raise GraphError(f"polynomial order must be >= 0, got {K}")
    X = np.ascontiguousarray(op._check(X))
    g = op.graph
    return _kernels.cheb_basis(g.indptr, g.indices, op.weights, op.diag, op.scale, X, int(K))


def cheb_basis(op: ScaledLaplacianOp, X: np.ndarray, K: int) -> list[np.ndarray]:
    B = cheb_basis_array(op, X, K)
    return [B[:, k, :] for k in range(K + 1)]


def cheb_sum(op: ScaledLaplacianOp, Z: np.ndarray) -> np.ndarray:
    """``sum_k T_k(L~) Z[:, k, :]`` by Clenshaw's recurrence (K operator applications)."""
    Z = np.ascontiguousarray(Z, dtype=float)
    if Z.ndim != 3 or Z.shape[0] != op.n:
        raise GraphError(f"expected an (n, K+1, d) array with n={op.n}, got {Z.shape}")
    g = op.graph
    return _kernels.cheb_sum(g.indptr, g.indices, op.weights, op.diag, op.scale, Z)


def cheb_matrices(op: ScaledLaplacianOp, K: int) -> np.ndarray:
    """Dense ``T_k(L~)`` for ``k = 0..K`` as a ``(K+1, n, n)`` array.

    Built from the recurrence on the dense operator and symmetrized, so each
    slice is exactly symmetric.
    """
    if K < 0:
        raise GraphError(f"polynomial order must be >= 0, got {K}")
    Lt = op.dense()
    n = op.n
    T = np.empty((K + 1, n, n))
    T[0] = np.eye(n)
    if K >= 1:
        T[1] = Lt
    for k in range(2, K + 1):
        T[k] = 2.0 * Lt @ T[k - 1] - T[k - 2]
    return 0.5 * (T + T.transpose(0, 2, 1))
