"""Reverse-mode gradients, losses, Adam/AdamW and the training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import cheb_sum, disjoint_union
from .layers import (
    Activation,
    LayerCache,
    LayerError,
    Mode,
    ModelCache,
    ModelSpec,
    Readout,
    activation_grad,
    model_forward,
)

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class Loss(str, Enum):
    MSE = "mse"
    CROSS_ENTROPY = "ce"
    BCE = "bce"


# ---------------------------------------------------------------------------
# backward passes
# ---------------------------------------------------------------------------


def backward_cheb_layer(cache: Optional[LayerCache], G: np.ndarray,
                        layer_index: Optional[int] = None):
    """Gradients of one Chebyshev layer given the upstream gradient ``G``.

    Returns ``(dX, dW)`` with ``dW`` shaped like the raw weights.
    """
    if cache is None:
        raise LayerError("backward pass without a forward cache", layer_index)
    p = cache.params
    B, n = cache.basis, cache.basis.shape[0]
    H = G * activation_grad(cache.preact, p.activation)
    if p.mode is Mode.STABLE:
        H = p.epsilon * H
    D = (B.reshape(n, -1).T @ H).reshape(p.K + 1, p.d_in, p.d_out)
    Z = (H @ cache.eff.reshape(-1, p.d_out).T).reshape(n, p.K + 1, p.d_in)
    dX = cheb_sum(cache.op, Z)
    if p.mode is Mode.STABLE:
        dX = dX + G
        dW = D - D.transpose(0, 2, 1)
    else:
        dW = D
    if not (np.all(np.isfinite(dX)) and np.all(np.isfinite(dW))):
        raise LayerError("non-finite gradient", layer_index)
    return dX, dW


@dataclass
class GradientBundle:
    encoder: Optional[tuple[np.ndarray, np.ndarray]]
    layers: list[np.ndarray]
    decoder: list[tuple[np.ndarray, np.ndarray]]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        """Same order as :meth:`ModelSpec.parameters`."""
        out = []
        if self.encoder is not None:
            out += list(self.encoder)
        out += self.layers
        for pair in self.decoder:
            out += list(pair)
        return out


def backward_model(model: ModelSpec, cache: ModelCache, d_out: np.ndarray) -> GradientBundle:
    G = d_out
    dec = []
    for dense, x, a in zip(reversed(model.decoder), reversed(cache.dec_inputs),
                           reversed(cache.dec_pre)):
        H = G * activation_grad(a, dense.activation)
        dec.append((x.T @ H, H.sum(axis=0)))
        G = H @ dense.weight.T
    dec.reverse()
    if model.readout is Readout.GRAPH_MEAN:
        counts = np.diff(cache.ptr)
        G = np.repeat(G / counts[:, None], counts, axis=0)
    layer_grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        G, dW = backward_cheb_layer(cache.layers[i], G, i)
        layer_grads.append(dW)
    layer_grads.reverse()
    enc = None
    if model.encoder is not None:
        H = G * activation_grad(cache.enc_pre, model.encoder.activation)
        enc = (cache.X_raw.T @ H, H.sum(axis=0))
        G = H @ model.encoder.weight.T
    return GradientBundle(enc, layer_grads, dec, G)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_and_grad(pred: np.ndarray, target: np.ndarray, kind: Loss) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to ``pred``.

    For cross-entropy ``target`` holds one class index per row; BCE and MSE
    take a target of the same shape as ``pred`` (BCE on logits).
    """
    kind = Loss(kind)
    pred = np.asarray(pred, dtype=float)
    if kind is Loss.CROSS_ENTROPY:
        idx = np.asarray(target).reshape(-1)
        if idx.shape[0] != pred.shape[0]:
            raise ValueError(f"{idx.shape[0]} class targets for {pred.shape[0]} rows")
        if not np.issubdtype(idx.dtype, np.integer):
            if not np.all(idx == np.round(idx)):
                raise ValueError("class targets must be integers")
            idx = idx.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= pred.shape[1]):
            raise ValueError(f"class index out of range for {pred.shape[1]} classes")
        m = pred.shape[0]
        z = pred - pred.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(m)
        loss = float(np.mean(logsum - z[rows, idx]))
        grad = np.exp(z - logsum[:, None])
        grad[rows, idx] -= 1.0
        return loss, grad / m
    target = np.asarray(target, dtype=float)
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction {pred.shape}")
    count = pred.size
    if kind is Loss.MSE:
        r = pred - target
        return float(np.mean(r * r)), 2.0 * r / count
    # log(1 + e^z) - t z, stable for both signs of z
    loss = np.logaddexp(0.0, pred) - target * pred
    sig = np.exp(-np.logaddexp(0.0, -pred))
    return float(np.mean(loss)), (sig - target) / count


def metric_of(pred: np.ndarray, target: np.ndarray, kind: Loss) -> float:
    """MSE for regression, accuracy for classification."""
    if kind is Loss.MSE:
        return float(np.mean((pred - target) ** 2))
    if kind is Loss.CROSS_ENTROPY:
        return float(np.mean(pred.argmax(axis=1) == np.asarray(target).reshape(-1)))
    return float(np.mean((pred > 0) == (np.asarray(target) > 0.5)))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> bool:
    """In-place Adam (``weight_decay > 0`` gives decoupled AdamW).

    Returns False, leaving everything untouched, when a gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state are not aligned")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm > 0:
        s = max_norm / (total + 1e-12)
        for g in grads:
            g *= s
    return total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    loss: Loss = Loss.MSE
    seed: int = 0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        self.loss = Loss(self.loss)
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Batch:
    graph: object
    ptr: np.ndarray
    features: np.ndarray
    rows: Optional[np.ndarray]  # output rows the loss applies to (node level)
    targets: np.ndarray


def collate(instances: Sequence, readout: Readout) -> Batch:
    """Disjoint-union batch; targets stacked in the order of the loss rows."""
    graph, ptr = disjoint_union([inst.graph for inst in instances])
    X = np.concatenate([inst.features for inst in instances], axis=0)
    targets = np.concatenate([np.asarray(inst.targets) for inst in instances], axis=0)
    rows = None
    if readout is Readout.NODE:
        parts = []
        for inst, off in zip(instances, ptr[:-1]):
            mask = np.arange(inst.graph.num_nodes) if inst.mask is None else inst.mask
            parts.append(np.asarray(mask, dtype=np.int64) + off)
        rows = np.concatenate(parts)
    return Batch(graph, ptr, X, rows, targets)


def batch_loss(model: ModelSpec, batch: Batch, kind: Loss, with_grad: bool = True):
    out, cache = model_forward(model, batch.graph, batch.features, batch.ptr)
    pred = out if batch.rows is None else out[batch.rows]
    loss, d_pred = loss_and_grad(pred, batch.targets, kind)
    metric = metric_of(pred, batch.targets, kind)
    if not with_grad:
        return loss, metric, None
    if batch.rows is None:
        d_out = d_pred
    else:
        d_out = np.zeros_like(out)
        np.add.at(d_out, batch.rows, d_pred)
    return loss, metric, backward_model(model, cache, d_out)


def evaluate(model: ModelSpec, instances: Sequence, kind: Loss, batch_size: int = 256):
    """Loss and metric over ``instances``, weighted by the number of loss rows."""
    total_loss = total_metric = 0.0
    count = 0
    for start in range(0, len(instances), batch_size):
        batch = collate(instances[start : start + batch_size], model.readout)
        loss, metric, _ = batch_loss(model, batch, kind, with_grad=False)
        m = batch.targets.shape[0]
        total_loss += loss * m
        total_metric += metric * m
        count += m
    return total_loss / count, total_metric / count


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    test_loss: float = float("nan")
    test_metric: float = float("nan")
    diverged: bool = False
    skipped_steps: int = 0

    def add(self, epoch, split, loss, metric, seconds):
        self.rows.append(dict(epoch=epoch, split=split, loss=loss, metric=metric,
                              seconds=seconds))


def train_model(model: ModelSpec, dataset, config: TrainConfig,
                on_epoch: Optional[Callable[[int, TrainHistory], None]] = None):
    """Mini-batch training with validation-based model selection.

    ``dataset`` needs ``train``, ``val`` and ``test`` instance lists.  Returns
    the best model (by validation loss) and the history.  A non-finite loss
    stops training; the history keeps everything recorded up to that point.
    """
    history = TrainHistory()
    best = model.copy()
    if config.epochs == 0:
        return best, history
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    wd = config.weight_decay if config.optimizer == "adamw" else 0.0
    train = list(dataset.train)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses, metrics, weights = [], [], []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = collate([train[i] for i in order[start : start + config.batch_size]],
                                model.readout)
                loss, metric, grads = batch_loss(model, batch, config.loss)
                if not np.isfinite(loss):
                    raise LayerError("non-finite loss")
                g = grads.flat()
                if config.grad_clip:
                    clip_global_norm(g, config.grad_clip)
                if not adam_step(params, g, state, config.learning_rate, weight_decay=wd):
                    history.skipped_steps += 1
                losses.append(loss)
                metrics.append(metric)
                weights.append(batch.targets.shape[0])
            val_loss, val_metric = evaluate(model, dataset.val, config.loss)
            if not np.isfinite(val_loss):
                raise LayerError("non-finite validation loss")
        except LayerError as exc:
            logger.warning("training diverged at epoch %d: %s", epoch, exc)
            history.diverged = True
            break
        elapsed = time.perf_counter() - t0
        history.add(epoch, "train", float(np.average(losses, weights=weights)),
                    float(np.average(metrics, weights=weights)), elapsed)
        history.add(epoch, "val", val_loss, val_metric, elapsed)
        if val_loss < history.best_val:
            history.best_val = val_loss
            history.best_epoch = epoch
            best = model.copy()
        if on_epoch is not None:
            on_epoch(epoch, history)
    if dataset.test:
        try:
            history.test_loss, history.test_metric = evaluate(best, dataset.test, config.loss)
        except LayerError as exc:
            logger.warning("test evaluation failed: %s", exc)
        history.add(history.best_epoch, "test", history.test_loss, history.test_metric,
                    time.perf_counter() - t0)
    return best, history


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def finite_difference_check(model: ModelSpec, graph, X: np.ndarray, target: np.ndarray,
                            h: Optional[float] = None, kind: Loss = Loss.MSE,
                            rows: Optional[np.ndarray] = None,
                            ptr: Optional[np.ndarray] = None, order: int = 4) -> float:
    """Max over parameters of ``|analytic - numeric| / max(1e-8, |numeric|)``.

    Numeric gradients are central differences: the 4-point stencil by default
    (step 5e-4), or the 2-point one with ``order=2`` (step 1e-5).  The 2-point
    stencil's rounding noise is about 1e-11 absolute, which is already 1e-5
    relative on gradient entries of size 1e-6.  ``rows`` restricts the loss
    to a subset of output rows.
    """
    kind = Loss(kind)
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    if h is None:
        h = 5e-4 if order == 4 else 1e-5
    batch = Batch(graph, ptr if ptr is not None else np.array([0, graph.num_nodes]), X,
                  rows, target)
    _, _, grads = batch_loss(model, batch, kind)

    def shifted(p, i, delta):
        orig = p.flat[i]
        p.flat[i] = orig + delta
        value = batch_loss(model, batch, kind, with_grad=False)[0]
        p.flat[i] = orig
        return value

    worst = 0.0
    for p, g in zip(model.parameters(), grads.flat()):
        for i in range(p.size):
            d1 = shifted(p, i, h) - shifted(p, i, -h)
            if order == 2:
                num = d1 / (2.0 * h)
            else:
                d2 = shifted(p, i, 2 * h) - shifted(p, i, -2 * h)
                num = (8.0 * d1 - d2) / (12.0 * h)
            worst = max(worst, abs(g.flat[i] - num) / max(1e-8, abs(num)))
    return worst


def kink_margin(model: ModelSpec, graph, X: np.ndarray) -> float:
    """Smallest ``|pre-activation|`` over every ReLU in the model (``inf`` if none)."""
    _, cache = model_forward(model, graph, X)
    sites = []
    if model.encoder is not None and model.encoder.activation is Activation.RELU:
        sites.append(cache.enc_pre)
    sites += [c.preact for c in cache.layers if c.params.activation is Activation.RELU]
    sites += [a for a, d in zip(cache.dec_pre, model.decoder) if d.activation is Activation.RELU]
    return min((float(np.abs(a).min()) for a in sites), default=float("inf"))


def random_check_case(rng: np.random.Generator, mode, activation, kind,
                      n: int = 6, d_raw: int = 2, hidden: int = 3, K: int = 2,
                      layers: int = 2, d_out: int = 2, margin: float = 0.01,
                      max_tries: int = 1000):
    """A small random model and loss problem for gradient checks.

    Biases are random too: with zero biases a ReLU model starts with
    pre-activations exactly on the kink.  Draws whose ReLU pre-activations
    come within ``margin`` of zero are rejected, so finite-difference steps
    never straddle a kink.
    """
    from .graph import build_graph
    from .layers import ModelConfig, init_model

    kind = Loss(kind)
    for _ in range(max_tries):
        # random connected graph: a spanning path plus a few chords
        perm = rng.permutation(n)
        edges = [(perm[i], perm[i + 1]) for i in range(n - 1)]
        edges += [tuple(rng.choice(n, 2, replace=False)) for _ in range(n // 2)]
        graph = build_graph(edges, n)
        cfg = ModelConfig(mode=mode, K=K, hidden=hidden, layers=layers, epsilon=0.5,
                          gamma=float(rng.uniform(0.0, 0.2)), activation=activation,
                          mlp_layers=2)
        model = init_model(cfg, d_raw, d_out, rng)
        for dense in [model.encoder, *model.decoder]:
            dense.bias[:] = rng.normal(0.0, 0.5, dense.bias.shape)
        X = rng.normal(size=(n, d_raw))
        if kink_margin(model, graph, X) > margin:
            break
    else:
        raise TrainingError(f"no kink-free draw in {max_tries} tries")
    if kind is Loss.CROSS_ENTROPY:
        target = rng.integers(0, d_out, size=n)
    elif kind is Loss.BCE:
        target = rng.integers(0, 2, size=(n, d_out)).astype(float)
    else:
        target = rng.normal(size=(n, d_out))
    return model, graph, X, target
