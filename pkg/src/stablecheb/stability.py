"""Layer Jacobians, their spectra, node-pair sensitivities and the random-matrix checks.

Vectorization is column stacking throughout: ``vec(A X B) = (B^T kron A) vec(X)``,
so entry ``vec(X)[j*n + v]`` is ``X[v, j]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import ScaledLaplacianOp, SparseGraph, cheb_basis_array, cheb_matrices
from .layers import Activation, ChebLayerParams, LayerError, Mode, effective_weights

DENSE_CAP = 4096


class StabilityError(ValueError):
    pass


def _op(graph, lambda_max, isolated="identity"):
    if isinstance(graph, ScaledLaplacianOp):
        return graph
    return ScaledLaplacianOp(graph, lambda_max, isolated)


def _linear_only(params: ChebLayerParams):
    if params.activation is not Activation.IDENTITY:
        raise StabilityError("Jacobian assembly assumes the identity activation, got "
                             f"{params.activation.value}")


def build_layer_jacobian(graph, params: ChebLayerParams, lambda_max: float = 2.0,
                         cap: int = DENSE_CAP) -> np.ndarray:
    """Dense Jacobian of one linear layer.

    Vanilla: ``sum_k W_k^T kron T_k(L~)``.  Stable: ``I + eps * sum_k Wh_k^T kron T_k(L~)``.
    ``graph`` may be a :class:`SparseGraph` or a ready :class:`ScaledLaplacianOp`.
    """
    op = _op(graph, lambda_max)
    _linear_only(params)
    n = op.n
    if n * max(params.d_in, params.d_out) > cap:
        raise StabilityError(f"n*d = {n * max(params.d_in, params.d_out)} exceeds the dense cap "
                             f"{cap}; use sensitivity_matrix for large graphs")
    T = cheb_matrices(op, params.K)
    if params.mode is Mode.VANILLA:
        return sum(np.kron(W.T, Tk) for W, Tk in zip(params.weights, T))
    A = continuous_jacobian(op, params, T=T)
    return np.eye(A.shape[0]) + params.epsilon * A


def continuous_jacobian(graph, params: ChebLayerParams, lambda_max: float = 2.0,
                        T: Optional[np.ndarray] = None) -> np.ndarray:
    """``sum_k (W_k - W_k^T - gamma I)^T kron T_k(L~)``, the ODE right-hand side's Jacobian."""
    op = _op(graph, lambda_max)
    if T is None:
        T = cheb_matrices(op, params.K)
    return sum(np.kron(effective_weights(W, params.gamma).T, Tk)
               for W, Tk in zip(params.weights, T))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # complex
    singular_values: np.ndarray  # descending
    spectral_norm: float
    max_abs_real_part: float
    matrix_dim: int
    converged: bool = True
    max_residual: float = 0.0

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(self.eigenvalues).max()) if self.eigenvalues.size else 0.0

    def eigen_pairs(self) -> list[list[float]]:
        return [[float(z.real), float(z.imag)] for z in self.eigenvalues]


def eig_spectrum(J: np.ndarray, cap: int = DENSE_CAP) -> SpectrumReport:
    """Eigenvalues (LAPACK Hessenberg + shifted QR) and singular values via ``J^T J``."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise StabilityError(f"eig_spectrum needs a square matrix, got {J.shape}")
    m = J.shape[0]
    if m > cap:
        raise StabilityError(f"matrix dimension {m} exceeds the dense cap {cap}")
    converged = True
    try:
        w, V = np.linalg.eig(J)
        norm = np.linalg.norm(J, "fro") or 1.0
        res = np.linalg.norm(J @ V - V * w, axis=0) / (np.linalg.norm(V, axis=0) * norm)
        max_res = float(res.max()) if m else 0.0
    except np.linalg.LinAlgError:
        converged = False
        w = np.full(m, np.nan + 0j)
        max_res = float("nan")
    s2 = np.linalg.eigvalsh(J.T @ J)[::-1]
    sv = np.sqrt(np.clip(s2, 0.0, None))
    return SpectrumReport(
        eigenvalues=w,
        singular_values=sv,
        spectral_norm=float(sv[0]) if m else 0.0,
        max_abs_real_part=float(np.abs(w.real).max()) if m else 0.0,
        matrix_dim=m,
        converged=converged,
        max_residual=max_res,
    )


# ---------------------------------------------------------------------------
# node-pair sensitivity
# ---------------------------------------------------------------------------


@dataclass
class SensitivityResult:
    matrix: np.ndarray  # (n, n); entry (v, u) = ||d x_v^(l) / d x_u^(0)||_F
    blocks: np.ndarray  # (n, d_out, n, d_in)
    convention: str = "frobenius norm over channel blocks"


def sensitivity_matrix(layers: Sequence[ChebLayerParams], graph, num_layers: Optional[int] = None,
                       lambda_max: float = 2.0) -> SensitivityResult:
    """Node-pair sensitivity of a linear stack after ``num_layers`` layers.

    Propagates the identity through the sparse Chebyshev recurrence, one input
    coordinate per column, so it never forms a Kronecker product.
    """
    op = _op(graph, lambda_max)
    stack = list(layers)[: (len(layers) if num_layers is None else num_layers)]
    if not stack:
        raise StabilityError("sensitivity needs at least one layer")
    for p in stack:
        _linear_only(p)
    n, d0 = op.n, stack[0].d_in
    # P[v, j, c]: derivative of channel j at node v w.r.t. input coordinate c = (u, i)
    P = np.eye(n * d0).reshape(n, d0, n * d0)
    for i, p in enumerate(stack):
        if P.shape[1] != p.d_in:
            raise LayerError(f"width {p.d_in} does not match previous width {P.shape[1]}", i)
        m = P.shape[2]
        flat = np.ascontiguousarray(P.reshape(n, p.d_in * m))
        B = cheb_basis_array(op, flat, p.K).reshape(n, p.K + 1, p.d_in, m)
        eff = p.effective()
        out = np.einsum("vkjc,kjo->voc", B, eff)
        P = P + p.epsilon * out if p.mode is Mode.STABLE else out
    blocks = P.reshape(n, P.shape[1], n, d0)
    return SensitivityResult(np.sqrt((blocks ** 2).sum(axis=(1, 3))), blocks)


# ---------------------------------------------------------------------------
# norm scan
# ---------------------------------------------------------------------------


def random_antisymmetric_layer(rng, K: int, d: int, sigma: float, epsilon: float = 1.0,
                               gamma: float = 0.0) -> ChebLayerParams:
    return ChebLayerParams(sigma * rng.standard_normal((K + 1, d, d)), Mode.STABLE, epsilon,
                           gamma, Activation.IDENTITY)


@dataclass
class NormScan:
    epsilons: np.ndarray
    norms: np.ndarray  # (seeds, len(eps)) of ||J||_2
    closed_form: np.ndarray  # sqrt(1 + eps^2 lambda_max(A^T A)), same shape
    slopes: np.ndarray  # per-seed fitted exponent of ||J||_2 - 1
    depth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vanilla_log_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vanilla_slopes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_slope(self) -> float:
        return float(self.slopes.mean())

    def table(self) -> list[tuple[float, float, float]]:
        return [(float(e), float(v), self.mean_slope)
                for e, v in zip(self.epsilons, self.norms.mean(axis=0))]


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def jacobian_norm_scan(graph, K: int = 3, d: int = 4, epsilons=(0.4, 0.2, 0.1, 0.05, 0.025),
                       seeds: int = 20, sigma: float = 0.05, lambda_max: float = 2.0,
                       vanilla_depth: int = 0, vanilla_K: int = 5,
                       vanilla_sigma: float = 0.5, seed0: int = 0) -> NormScan:
    """``||J||_2 - 1`` against the step size for random antisymmetric stable layers.

    With ``vanilla_depth > 0`` it also records ``log ||J_l ... J_1||_2`` for a
    stack of random Gaussian vanilla layers.
    """
    op = _op(graph, lambda_max)
    eps = np.asarray(epsilons, dtype=float)
    T = cheb_matrices(op, K)
    norms = np.empty((seeds, eps.size))
    closed = np.empty_like(norms)
    slopes = np.empty(seeds)
    for s in range(seeds):
        rng = np.random.default_rng([seed0, s])
        p = random_antisymmetric_layer(rng, K, d, sigma)
        A = continuous_jacobian(op, p, T=T)
        top = np.linalg.eigvalsh(A.T @ A)[-1]
        eye = np.eye(A.shape[0])
        for j, e in enumerate(eps):
            norms[s, j] = eig_spectrum_norm(eye + e * A)
            closed[s, j] = np.sqrt(1.0 + e * e * top)
        slopes[s] = loglog_slope(eps, norms[s] - 1.0)
    scan = NormScan(eps, norms, closed, slopes)
    if vanilla_depth > 0:
        Tv = cheb_matrices(op, vanilla_K)
        depth = np.arange(1, vanilla_depth + 1)
        logs = np.empty((seeds, vanilla_depth))
        vs = np.empty(seeds)
        for s in range(seeds):
            rng = np.random.default_rng([seed0, s, 1])
            prod = np.eye(op.n * d)
            for layer in range(vanilla_depth):
                W = vanilla_sigma * rng.standard_normal((vanilla_K + 1, d, d))
                J = sum(np.kron(Wk.T, Tk) for Wk, Tk in zip(W, Tv))
                prod = J @ prod
                logs[s, layer] = np.log(np.linalg.norm(prod, 2))
            vs[s] = float(np.polyfit(depth, logs[s], 1)[0])
        scan.depth, scan.vanilla_log_norms, scan.vanilla_slopes = depth, logs, vs
    return scan


def eig_spectrum_norm(J: np.ndarray) -> float:
    """Largest singular value from the symmetric eigenproblem of ``J^T J``."""
    return float(np.sqrt(np.linalg.eigvalsh(J.T @ J)[-1]))


# ---------------------------------------------------------------------------
# singular-value moments
# ---------------------------------------------------------------------------


@dataclass
class MomentRecord:
    lam: float
    K: int
    empirical_mean: float
    empirical_var: float
    theory_mean: float
    theory_var: float
    se_mean: float
    se_var: float
    trials: int

    def within(self, n_se: float = 3.0, atol: float = 1e-12) -> bool:
        return (abs(self.empirical_mean - self.theory_mean) <= n_se * self.se_mean + atol
                and abs(self.empirical_var - self.theory_var) <= n_se * self.se_var + atol)


@dataclass
class MomentReport:
    records: list[MomentRecord]
    sigma: float
    d: int
    scaling: str = "entries ~ N(0, sigma^2 / d)"


def theory_moments(lam: float, K: int, sigma: float) -> tuple[float, float]:
    """Mean ``sigma^2 sum_k lam^(2k)`` and variance ``sigma^4 (sum_k lam^(2k))^2``, k=1..K."""
    s = float(sum(lam ** (2 * k) for k in range(1, K + 1)))
    return sigma ** 2 * s, sigma ** 4 * s * s


def mp_moment_experiment(lambdas: Sequence[float], K: int, sigma: float = 1.0, d: int = 256,
                         trials: int = 200, seed: int = 0) -> MomentReport:
    """Squared singular values of ``sum_{k=1..K} W_k^T lam^k`` over random Gaussian ``W_k``.

    Standard errors treat the ``trials * d`` pooled squared singular values as
    a sample: ``sqrt(var/N)`` for the mean and ``sqrt((m4 - var^2)/N)`` for the
    variance.
    """
    if trials < 1:
        raise StabilityError(f"trials must be >= 1, got {trials}")
    if K < 1:
        raise StabilityError(f"K must be >= 1, got {K}")
    records = []
    scale = sigma / np.sqrt(d)
    for li, lam in enumerate(lambdas):
        rng = np.random.default_rng([seed, li, K])
        pooled = np.empty((trials, d))
        for t in range(trials):
            W = scale * rng.standard_normal((K, d, d))
            powers = np.array([lam ** k for k in range(1, K + 1)])
            J = np.tensordot(powers, W, axes=1).T
            pooled[t] = np.linalg.eigvalsh(J @ J.T)
        g = np.clip(pooled.reshape(-1), 0.0, None)
        N = g.size
        mean = float(g.mean())
        c = g - mean
        var = float((c * c).mean())
        m4 = float((c ** 4).mean())
        tm, tv = theory_moments(lam, K, sigma)
        records.append(MomentRecord(float(lam), K, mean, var, tm, tv, np.sqrt(var / N),
                                    np.sqrt(max(m4 - var * var, 0.0) / N), trials))
    return MomentReport(records, sigma, d)


# ---------------------------------------------------------------------------
# instability in K
# ---------------------------------------------------------------------------


def vanilla_norm_trend(graph, K_values: Sequence[int] = tuple(range(1, 9)), d: int = 4,
                       sigma: float = 0.5, seeds: int = 100, lambda_max: float = 2.0,
                       seed0: int = 0) -> np.ndarray:
    """Mean ``||J||_2`` of a random Gaussian vanilla layer for each ``K``.

    Each seed draws weights for the largest ``K`` and uses the leading
    ``K+1`` blocks for smaller orders (common random numbers).
    """
    op = _op(graph, lambda_max)
    Kmax = max(K_values)
    T = cheb_matrices(op, Kmax)
    out = np.zeros(len(K_values))
    for s in range(seeds):
        W = sigma * np.random.default_rng([seed0, s]).standard_normal((Kmax + 1, d, d))
        J = np.zeros((op.n * d, op.n * d))
        done = -1
        for i, K in enumerate(sorted(K_values)):
            for k in range(done + 1, K + 1):
                J += np.kron(W[k].T, T[k])
            done = K
            out[i] += eig_spectrum_norm(J)
    return out / seeds
