"""Hot inner loops: CSR neighbour sums, the Chebyshev recurrence, Clenshaw sums, BFS.

Every kernel has a numba ``@njit`` implementation and a pure-numpy fallback with
the same signature.  The backend is picked once at import time from the
``STABLECHEB_BACKEND`` environment variable (``numba`` or ``numpy``).  When
numba is requested but cannot be imported the numpy path is used silently.

All kernels are sequential so results are deterministic for a fixed input.
"""
from __future__ import annotations

import os
from collections import deque

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


_requested = os.environ.get("STABLECHEB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"STABLECHEB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (_requested == "numba" and NUMBA_AVAILABLE) else "numpy"


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scaled_apply_numba(indptr, indices, weights, diag, scale, X, out):
    # out = scale * (diag*X - S X) - X, S = D^-1/2 A D^-1/2
    n, d = X.shape
    acc = np.empty(d)
    for i in range(n):
        for j in range(d):
            acc[j] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            u = indices[p]
            w = weights[p]
            for j in range(d):
                acc[j] += w * X[u, j]
        di = diag[i]
        for j in range(d):
            out[i, j] = scale * (di * X[i, j] - acc[j]) - X[i, j]
    return out


@njit(cache=True)
def _cheb_basis_numba(indptr, indices, weights, diag, scale, X, K):
    n, d = X.shape
    B = np.empty((n, K + 1, d))
    B[:, 0, :] = X
    if K == 0:
        return B
    prev = np.ascontiguousarray(X)
    cur = np.empty((n, d))
    _scaled_apply_numba(indptr, indices, weights, diag, scale, prev, cur)
    B[:, 1, :] = cur
    nxt = np.empty((n, d))
    for k in range(2, K + 1):
        _scaled_apply_numba(indptr, indices, weights, diag, scale, cur, nxt)
        for i in range(n):
            for j in range(d):
                nxt[i, j] = 2.0 * nxt[i, j] - prev[i, j]
        B[:, k, :] = nxt
        prev, cur, nxt = cur, nxt, prev
        if k == 2:
            # prev aliased X on the first pass; never write into the caller's array
            nxt = np.empty((n, d))
    return B


@njit(cache=True)
def _cheb_sum_numba(indptr, indices, weights, diag, scale, Z):
    # Clenshaw: sum_k T_k(Lt) Z[:, k, :]
    n, K1, d = Z.shape
    K = K1 - 1
    if K == 0:
        return Z[:, 0, :].copy()
    b1 = np.zeros((n, d))
    b2 = np.zeros((n, d))
    tmp = np.empty((n, d))
    for k in range(K, 0, -1):
        _scaled_apply_numba(indptr, indices, weights, diag, scale, b1, tmp)
        for i in range(n):
            for j in range(d):
                tmp[i, j] = Z[i, k, j] + 2.0 * tmp[i, j] - b2[i, j]
        b1, b2, tmp = tmp, b1, b2
    _scaled_apply_numba(indptr, indices, weights, diag, scale, b1, tmp)
    out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            out[i, j] = Z[i, 0, j] + tmp[i, j] - b2[i, j]
    return out


@njit(cache=True)
def _bfs_all_pairs_numba(indptr, indices, n):
    dist = np.full((n, n), -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            dv = dist[s, v] + 1
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if dist[s, u] < 0:
                    dist[s, u] = dv
                    queue[tail] = u
                    tail += 1
    return dist


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _neighbor_sum_numpy(indptr, indices, weights, X):
    n = indptr.shape[0] - 1
    out = np.zeros((n, X.shape[1]))
    if indices.shape[0] == 0:
        return out
    starts = indptr[:-1]
    nonempty = starts < indptr[1:]
    contrib = weights[:, None] * X[indices]
    out[nonempty] = np.add.reduceat(contrib, starts[nonempty], axis=0)
    return out


def _scaled_apply_numpy(indptr, indices, weights, diag, scale, X, out):
    acc = _neighbor_sum_numpy(indptr, indices, weights, X)
    out[...] = scale * (diag[:, None] * X - acc) - X
    return out


def _cheb_basis_numpy(indptr, indices, weights, diag, scale, X, K):
    n, d = X.shape
    B = np.empty((n, K + 1, d))
    B[:, 0, :] = X
    if K == 0:
        return B
    prev = X
    cur = _scaled_apply_numpy(indptr, indices, weights, diag, scale, X, np.empty((n, d)))
    B[:, 1, :] = cur
    for k in range(2, K + 1):
        nxt = _scaled_apply_numpy(indptr, indices, weights, diag, scale, cur, np.empty((n, d)))
        nxt = 2.0 * nxt - prev
        B[:, k, :] = nxt
        prev, cur = cur, nxt
    return B


def _cheb_sum_numpy(indptr, indices, weights, diag, scale, Z):
    n, K1, d = Z.shape
    K = K1 - 1
    if K == 0:
        return Z[:, 0, :].copy()
    b1 = np.zeros((n, d))
    b2 = np.zeros((n, d))
    tmp = np.empty((n, d))
    for k in range(K, 0, -1):
        _scaled_apply_numpy(indptr, indices, weights, diag, scale, b1, tmp)
        new = Z[:, k, :] + 2.0 * tmp - b2
        b1, b2 = new, b1
    _scaled_apply_numpy(indptr, indices, weights, diag, scale, b1, tmp)
    return Z[:, 0, :] + tmp - b2


def _bfs_all_pairs_numpy(indptr, indices, n):
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            dv = row[v] + 1
            for u in indices[indptr[v] : indptr[v + 1]]:
                if row[u] < 0:
                    row[u] = dv
                    queue.append(u)
    return dist


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numba": {
        "scaled_apply": _scaled_apply_numba,
        "cheb_basis": _cheb_basis_numba,
        "cheb_sum": _cheb_sum_numba,
        "bfs_all_pairs": _bfs_all_pairs_numba,
    },
    "numpy": {
        "scaled_apply": _scaled_apply_numpy,
        "cheb_basis": _cheb_basis_numpy,
        "cheb_sum": _cheb_sum_numpy,
        "bfs_all_pairs": _bfs_all_pairs_numpy,
    },
}

_active = IMPLEMENTATIONS[BACKEND]
scaled_apply = _active["scaled_apply"]
cheb_basis = _active["cheb_basis"]
cheb_sum = _active["cheb_sum"]
bfs_all_pairs = _active["bfs_all_pairs"]
