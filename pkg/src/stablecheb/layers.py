"""ChebNet and Stable-ChebNet layers, encoder/decoder heads and model composition."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .graph import GraphError, ScaledLaplacianOp, SparseGraph, cheb_basis_array


class LayerError(ValueError):
    """Configuration or numerical failure inside a layer."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"


class Mode(str, Enum):
    VANILLA = "vanilla"
    STABLE = "stable"


class Readout(str, Enum):
    NODE = "node"
    GRAPH_MEAN = "graph_mean"


def activate(a: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.IDENTITY:
        return a
    if kind is Activation.TANH:
        return np.tanh(a)
    return np.maximum(a, 0.0)


def activation_grad(a: np.ndarray, kind: Activation) -> np.ndarray:
    """Derivative of the activation evaluated at the pre-activation ``a``."""
    if kind is Activation.IDENTITY:
        return np.ones_like(a)
    if kind is Activation.TANH:
        t = np.tanh(a)
        return 1.0 - t * t
    return (a > 0.0).astype(float)


@dataclass
class ChebLayerParams:
    """Weights ``W_k`` stacked as ``(K+1, d_in, d_out)`` plus the layer mode."""

    weights: np.ndarray
    mode: Mode = Mode.VANILLA
    epsilon: float = 1.0
    gamma: float = 0.0
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim == 2:
            self.weights = self.weights[None]
        self.mode = Mode(self.mode)
        self.activation = Activation(self.activation)

    @property
    def K(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[2]

    def validate(self, layer_index: Optional[int] = None) -> None:
        if self.weights.ndim != 3:
            raise LayerError("weights must have shape (K+1, d_in, d_out)", layer_index)
        if not np.all(np.isfinite(self.weights)):
            raise LayerError("non-finite weight entries", layer_index)
        if self.mode is Mode.STABLE:
            if self.d_in != self.d_out:
                raise LayerError(
                    f"stable layers must be square, got {self.d_in}x{self.d_out}", layer_index)
            if not self.epsilon > 0:
                raise LayerError(f"epsilon must be > 0, got {self.epsilon}", layer_index)
            if not self.gamma >= 0:
                raise LayerError(f"gamma must be >= 0, got {self.gamma}", layer_index)

    def effective(self) -> np.ndarray:
        """The weights the aggregation actually multiplies by."""
        if self.mode is Mode.VANILLA:
            return self.weights
        out = self.weights - self.weights.transpose(0, 2, 1)
        if self.gamma:
            idx = np.arange(self.d_in)
            out[:, idx, idx] -= self.gamma
        return out


def effective_weights(W: np.ndarray, gamma: float) -> np.ndarray:
    """``W - W^T - gamma I``; antisymmetric when ``gamma == 0``."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise LayerError(f"effective_weights needs a square matrix, got shape {W.shape}")
    out = W - W.T
    if gamma:
        out[np.diag_indices_from(out)] -= gamma
    return out


@dataclass
class LayerCache:
    params: ChebLayerParams
    op: ScaledLaplacianOp
    basis: np.ndarray  # (n, K+1, d_in)
    preact: np.ndarray  # (n, d_out)
    eff: np.ndarray  # (K+1, d_in, d_out)


def _aggregate(op, X, params, layer_index):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise LayerError(f"expected {params.d_in} input channels, got shape {X.shape}",
                         layer_index)
    try:
        B = cheb_basis_array(op, X, params.K)
    except GraphError as exc:
        raise LayerError(str(exc), layer_index) from exc
    eff = params.effective()
    n = X.shape[0]
    A = B.reshape(n, -1) @ eff.reshape(-1, params.d_out)
    return B, eff, A


def cheb_conv_forward(op: ScaledLaplacianOp, X: np.ndarray, params: ChebLayerParams,
                      layer_index: Optional[int] = None) -> tuple[np.ndarray, LayerCache]:
    """``sigma(sum_k T_k(L~) X W_k)``."""
    if params.mode is not Mode.VANILLA:
        raise LayerError("cheb_conv_forward needs a vanilla layer", layer_index)
    params.validate(layer_index)
    B, eff, A = _aggregate(op, X, params, layer_index)
    Y = activate(A, params.activation)
    if not np.all(np.isfinite(Y)):
        raise LayerError("non-finite output", layer_index)
    return Y, LayerCache(params, op, B, A, eff)


def stable_cheb_forward(op: ScaledLaplacianOp, X: np.ndarray, params: ChebLayerParams,
                        layer_index: Optional[int] = None) -> tuple[np.ndarray, LayerCache]:
    """Forward-Euler step ``X + eps * sigma(sum_k T_k(L~) X (W_k - W_k^T - gamma I))``."""
    if params.mode is not Mode.STABLE:
        raise LayerError("stable_cheb_forward needs a stable layer", layer_index)
    params.validate(layer_index)
    B, eff, A = _aggregate(op, X, params, layer_index)
    Y = X + params.epsilon * activate(A, params.activation)
    if not np.all(np.isfinite(Y)):
        raise LayerError("non-finite output", layer_index)
    return Y, LayerCache(params, op, B, A, eff)


def layer_forward(op, X, params, layer_index=None):
    if params.mode is Mode.STABLE:
        return stable_cheb_forward(op, X, params, layer_index)
    return cheb_conv_forward(op, X, params, layer_index)


@dataclass
class Dense:
    """Affine map ``X W + b`` followed by an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        self.activation = Activation(self.activation)

    @classmethod
    def identity(cls, d: int) -> "Dense":
        return cls(np.eye(d), np.zeros(d))


@dataclass
class ModelSpec:
    encoder: Optional[Dense]
    layers: list[ChebLayerParams]
    readout: Readout = Readout.NODE
    decoder: list[Dense] = field(default_factory=list)
    lambda_max: float = 2.0

    def __post_init__(self):
        self.readout = Readout(self.readout)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (shared with :class:`GradientBundle`)."""
        out = []
        if self.encoder is not None:
            out += [self.encoder.weight, self.encoder.bias]
        out += [p.weights for p in self.layers]
        for dense in self.decoder:
            out += [dense.weight, dense.bias]
        return out

    def parameter_names(self) -> list[str]:
        names = []
        if self.encoder is not None:
            names += ["encoder.weight", "encoder.bias"]
        names += [f"layers.{i}.weights" for i in range(len(self.layers))]
        for i in range(len(self.decoder)):
            names += [f"decoder.{i}.weight", f"decoder.{i}.bias"]
        return names

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "ModelSpec":
        def cp(d):
            return None if d is None else Dense(d.weight.copy(), d.bias.copy(), d.activation)

        return ModelSpec(
            cp(self.encoder),
            [ChebLayerParams(p.weights.copy(), p.mode, p.epsilon, p.gamma, p.activation)
             for p in self.layers],
            self.readout,
            [cp(d) for d in self.decoder],
            self.lambda_max,
        )

    def validate(self, d_raw: Optional[int] = None) -> None:
        d = d_raw
        if self.encoder is not None:
            if d is not None and self.encoder.weight.shape[0] != d:
                raise LayerError(f"encoder expects {self.encoder.weight.shape[0]} input "
                                 f"channels, data has {d}")
            d = self.encoder.weight.shape[1]
        for i, p in enumerate(self.layers):
            p.validate(i)
            if d is not None and p.d_in != d:
                raise LayerError(f"input width {p.d_in} does not match previous width {d}", i)
            d = p.d_out
        for dense in self.decoder:
            if d is not None and dense.weight.shape[0] != d:
                raise LayerError(f"decoder input {dense.weight.shape[0]} does not match {d}")
            d = dense.weight.shape[1]


@dataclass
class ModelCache:
    X_raw: np.ndarray
    enc_pre: Optional[np.ndarray]
    layer_inputs: list[np.ndarray]
    layers: list[LayerCache]
    ptr: Optional[np.ndarray]
    dec_inputs: list[np.ndarray]
    dec_pre: list[np.ndarray]


def graph_mean(H: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    counts = np.diff(ptr)
    if np.any(counts == 0):
        raise LayerError("graph_mean readout over an empty graph")
    return np.add.reduceat(H, ptr[:-1], axis=0) / counts[:, None]


def model_forward(model: ModelSpec, graph: SparseGraph, X_raw: np.ndarray,
                  ptr: Optional[np.ndarray] = None) -> tuple[np.ndarray, ModelCache]:
    """Encoder, Chebyshev stack, readout, decoder.

    ``ptr`` holds node offsets when ``graph`` is a block-diagonal batch; the
    graph-mean readout then returns one row per member graph.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 2 or X_raw.shape[0] != graph.num_nodes:
        raise LayerError(f"features of shape {X_raw.shape} do not fit a "
                         f"{graph.num_nodes}-node graph")
    op = ScaledLaplacianOp(graph, model.lambda_max)
    H = X_raw
    enc_pre = None
    if model.encoder is not None:
        if X_raw.shape[1] != model.encoder.weight.shape[0]:
            raise LayerError(f"encoder expects {model.encoder.weight.shape[0]} channels, "
                             f"got {X_raw.shape[1]}")
        enc_pre = H @ model.encoder.weight + model.encoder.bias
        H = activate(enc_pre, model.encoder.activation)
    inputs, caches = [], []
    for i, params in enumerate(model.layers):
        inputs.append(H)
        H, c = layer_forward(op, H, params, i)
        caches.append(c)
    if model.readout is Readout.GRAPH_MEAN:
        if ptr is None:
            ptr = np.array([0, graph.num_nodes])
        H = graph_mean(H, ptr)
    dec_inputs, dec_pre = [], []
    for dense in model.decoder:
        dec_inputs.append(H)
        a = H @ dense.weight + dense.bias
        dec_pre.append(a)
        H = activate(a, dense.activation)
    if not np.all(np.isfinite(H)):
        raise LayerError("non-finite model output")
    return H, ModelCache(X_raw, enc_pre, inputs, caches, ptr, dec_inputs, dec_pre)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; the vocabulary follows the sweep grids."""

    mode: Mode = Mode.STABLE
    K: int = 3
    hidden: int = 16
    layers: int = 1
    epsilon: float = 0.3
    gamma: float = 0.0
    activation: Activation = Activation.TANH
    mlp_layers: int = 1
    readout: Readout = Readout.NODE
    lambda_max: float = 2.0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.activation = Activation(self.activation)
        self.readout = Readout(self.readout)


def init_model(config: ModelConfig, d_raw: int, d_out: int,
               rng: np.random.Generator) -> ModelSpec:
    """Glorot-uniform weights, zero biases."""
    d = config.hidden
    encoder = Dense(glorot_uniform(rng, (d_raw, d)), np.zeros(d), config.activation)
    layers = [
        ChebLayerParams(glorot_uniform(rng, (config.K + 1, d, d)), config.mode,
                        config.epsilon, config.gamma, config.activation)
        for _ in range(config.layers)
    ]
    decoder = []
    for i in range(config.mlp_layers):
        last = i == config.mlp_layers - 1
        width = d_out if last else d
        act = Activation.IDENTITY if last else config.activation
        decoder.append(Dense(glorot_uniform(rng, (d, width)), np.zeros(width), act))
    model = ModelSpec(encoder, layers, config.readout, decoder, config.lambda_max)
    model.validate(d_raw)
    return model
