"""Synthetic long-range benchmarks: ring transfer, barbell regression, graph properties."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from . import _kernels
from .graph import SparseGraph, build_graph
from .io import read_records, write_json, write_records, read_json

GENERATOR_VERSION = "stablecheb-synth-1"
FAMILIES = ("erdos_renyi", "barabasi_albert", "caterpillar", "star", "path", "cycle",
            "grid", "ladder")


class DatasetError(ValueError):
    pass


class TaskKind(str, Enum):
    RING_TRANSFER = "ring_transfer"
    BARBELL = "barbell"
    DIAMETER = "diameter"
    SSSP = "sssp"
    ECCENTRICITY = "eccentricity"


@dataclass(eq=False)
class TaskInstance:
    """One graph with features and targets.

    ``targets`` has one row per loss row: per masked node for node-level tasks,
    a single row for graph-level tasks.  Ring transfer stores class indices.
    """

    graph: SparseGraph
    features: np.ndarray
    targets: np.ndarray
    mask: Optional[np.ndarray]
    task_kind: TaskKind
    raw_targets: Optional[np.ndarray] = None


@dataclass(eq=False)
class DatasetSplit:
    train: list[TaskInstance]
    val: list[TaskInstance]
    test: list[TaskInstance]
    seed: int
    version: str = GENERATOR_VERSION
    config: dict = field(default_factory=dict)
    normalization: Optional[dict] = None

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def _split_counts(count, fractions=(0.8, 0.1, 0.1)):
    if isinstance(count, (tuple, list)):
        if len(count) != 3:
            raise DatasetError("split counts must be (train, val, test)")
        return tuple(int(c) for c in count)
    n_val = int(round(count * fractions[1]))
    n_test = int(round(count * fractions[2]))
    return count - n_val - n_test, n_val, n_test


# ---------------------------------------------------------------------------
# all-pairs shortest paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class APSPResult:
    distances: np.ndarray
    eccentricity: np.ndarray
    diameter: int


def oracle_apsp(graph: SparseGraph) -> APSPResult:
    """BFS from every node of an unweighted connected graph."""
    dist = _kernels.bfs_all_pairs(graph.indptr, graph.indices, graph.num_nodes)
    if np.any(dist < 0):
        u, v = np.argwhere(dist < 0)[0]
        raise DatasetError(f"graph is disconnected: node {v} unreachable from node {u}")
    ecc = dist.max(axis=1)
    return APSPResult(dist, ecc, int(ecc.max()))


# ---------------------------------------------------------------------------
# ring transfer
# ---------------------------------------------------------------------------


def ring_graph(n: int) -> SparseGraph:
    return build_graph([(i, (i + 1) % n) for i in range(n)], n)


def ring_instance(ring_size: int, num_classes: int, label: int) -> TaskInstance:
    X = np.full((ring_size, num_classes), 1.0 / num_classes)
    X[ring_size // 2] = 0.0
    X[ring_size // 2, label] = 1.0
    return TaskInstance(ring_graph(ring_size), X, np.array([label], dtype=np.int64),
                        np.array([0]), TaskKind.RING_TRANSFER)


def gen_ring_transfer(ring_size: int, num_classes: int, count, seed: int) -> DatasetSplit:
    """Source at ``ring_size/2`` carries a one-hot class; classify node 0.

    ``count`` is a total (split 80/10/10) or a (train, val, test) triple.
    Labels are balanced within each split.
    """
    if ring_size < 4 or ring_size % 2:
        raise DatasetError(f"ring_size must be even and >= 4, got {ring_size}")
    if num_classes < 2:
        raise DatasetError(f"num_classes must be >= 2, got {num_classes}")
    splits = []
    for stream, c in enumerate(_split_counts(count)):
        labels = np.arange(c) % num_classes
        labels = _rng(seed, stream, 0).permutation(labels)
        splits.append([ring_instance(ring_size, num_classes, int(y)) for y in labels])
    return DatasetSplit(*splits, seed=seed,
                        config=dict(kind="ring_transfer", ring_size=ring_size,
                                    num_classes=num_classes, count=count))


# ---------------------------------------------------------------------------
# barbell
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BarbellLayout:
    graph: SparseGraph
    left: np.ndarray
    right: np.ndarray
    bridge: np.ndarray


def barbell_graph(total_nodes: int, bridge_length: int) -> BarbellLayout:
    """Two cliques joined by a path of ``bridge_length`` nodes.

    Nodes ``0..m-1`` form the left bell, the bridge follows, then the right bell.
    The bridge attaches to the last left node and the first right node.
    """
    if bridge_length < 1:
        raise DatasetError("bridge_length must be >= 1")
    if total_nodes < 6 + bridge_length:
        raise DatasetError(f"need total_nodes >= 6 + bridge_length, got {total_nodes}")
    if (total_nodes - bridge_length) % 2:
        raise DatasetError("bells must have equal size: total_nodes - bridge_length is odd")
    m = (total_nodes - bridge_length) // 2
    left = np.arange(m)
    bridge = np.arange(m, m + bridge_length)
    right = np.arange(m + bridge_length, total_nodes)
    edges = [(a, b) for idx in (left, right) for i, a in enumerate(idx) for b in idx[i + 1:]]
    chain = [left[-1], *bridge, right[0]]
    edges += list(zip(chain[:-1], chain[1:]))
    return BarbellLayout(build_graph(edges, total_nodes), left, right, bridge)


def barbell_instance(layout: BarbellLayout, rng: np.random.Generator,
                     target_rule: str = "mean") -> TaskInstance:
    """Standard-normal bell features; targets depend only on the opposite bell.

    ``target_rule="mean"``: every node in one bell regresses onto
    ``sqrt(m) * mean(opposite features)``, unit variance, permutation invariant.
    ``target_rule="mirror"``: node ``i`` of one bell regresses onto the feature
    of node ``i`` of the other.
    """
    n = layout.graph.num_nodes
    m = layout.left.shape[0]
    X = np.zeros((n, 1))
    X[layout.left, 0] = rng.standard_normal(m)
    X[layout.right, 0] = rng.standard_normal(m)
    mask = np.concatenate([layout.left, layout.right])
    if target_rule == "mean":
        t_left = X[layout.right, 0].sum() / np.sqrt(m)
        t_right = X[layout.left, 0].sum() / np.sqrt(m)
        y = np.concatenate([np.full(m, t_left), np.full(m, t_right)])
    elif target_rule == "mirror":
        y = np.concatenate([X[layout.right, 0], X[layout.left, 0]])
    else:
        raise DatasetError(f"unknown barbell target rule {target_rule!r}")
    return TaskInstance(layout.graph, X, y[:, None], mask, TaskKind.BARBELL)


def gen_barbell(total_nodes: int, bridge_length: int, count, seed: int,
                target_rule: str = "mean") -> DatasetSplit:
    layout = barbell_graph(total_nodes, bridge_length)
    splits = [
        [barbell_instance(layout, _rng(seed, stream, i), target_rule) for i in range(c)]
        for stream, c in enumerate(_split_counts(count))
    ]
    return DatasetSplit(*splits, seed=seed,
                        config=dict(kind="barbell", total_nodes=total_nodes,
                                    bridge_length=bridge_length, count=count,
                                    target_rule=target_rule))


# ---------------------------------------------------------------------------
# graph property prediction
# ---------------------------------------------------------------------------


def _grid_edges(n: int, width: int):
    edges = []
    for v in range(n):
        if (v + 1) % width and v + 1 < n:
            edges.append((v, v + 1))
        if v + width < n:
            edges.append((v, v + width))
    return edges


def sample_family_graph(family: str, n: int, rng: np.random.Generator) -> SparseGraph:
    """One graph with ``n`` nodes from ``family`` (may be disconnected for ER)."""
    s = int(rng.integers(2**31 - 1))
    if family == "erdos_renyi":
        nxg = nx.gnp_random_graph(n, float(rng.choice([0.2, 0.5])), seed=s)
        edges = list(nxg.edges())
    elif family == "barabasi_albert":
        edges = list(nx.barabasi_albert_graph(n, int(rng.choice([1, 2])), seed=s).edges())
    elif family == "caterpillar":
        spine = int(rng.integers(max(2, n // 4), max(3, n // 2) + 1))
        edges = [(i, i + 1) for i in range(spine - 1)]
        edges += [(int(rng.integers(spine)), v) for v in range(spine, n)]
    elif family == "star":
        edges = [(0, v) for v in range(1, n)]
    elif family == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif family == "cycle":
        edges = [(i, (i + 1) % n) for i in range(n)]
    elif family == "grid":
        width = int(rng.integers(3, int(np.sqrt(n)) + 2))
        edges = _grid_edges(n, width)
    elif family == "ladder":
        edges = _grid_edges(n, 2)
    else:
        raise DatasetError(f"unknown graph family {family!r}")
    # random relabelling so node order carries no structure
    perm = rng.permutation(n)
    return build_graph([(perm[a], perm[b]) for a, b in edges], n)


def graph_property_instance(task: TaskKind, rng: np.random.Generator,
                            node_range=(25, 35), max_retries: int = 100) -> TaskInstance:
    family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    n = int(rng.integers(node_range[0], node_range[1] + 1))
    for _ in range(max_retries):
        g = sample_family_graph(family, n, rng)
        try:
            apsp = oracle_apsp(g)
            break
        except DatasetError:
            continue
    else:
        raise DatasetError(f"no connected {family} graph after {max_retries} attempts")
    x = rng.uniform(0.0, 1.0, size=(n, 1))
    if task is TaskKind.DIAMETER:
        return TaskInstance(g, x, np.array([[float(apsp.diameter)]]), None, task)
    if task is TaskKind.ECCENTRICITY:
        return TaskInstance(g, x, apsp.eccentricity[:, None].astype(float), None, task)
    source = int(rng.integers(n))
    indicator = np.zeros((n, 1))
    indicator[source] = 1.0
    return TaskInstance(g, np.hstack([x, indicator]),
                        apsp.distances[source][:, None].astype(float), None, task)


def normalize_targets(ds: DatasetSplit) -> DatasetSplit:
    """z-score all splits with training-split statistics (stored on ``ds``)."""
    y = np.concatenate([inst.targets.reshape(-1) for inst in ds.train])
    mean, std = float(y.mean()), float(y.std())
    if std == 0.0:
        std = 1.0
    for part in (ds.train, ds.val, ds.test):
        for inst in part:
            if inst.raw_targets is None:
                inst.raw_targets = inst.targets
            inst.targets = (inst.raw_targets - mean) / std
    ds.normalization = {"mean": mean, "std": std}
    return ds


def gen_graph_property(task, count_train: int = 5120, count_val: int = 640,
                       count_test: int = 1280, node_range=(25, 35), seed: int = 0,
                       normalize: bool = True) -> DatasetSplit:
    task = TaskKind(task)
    if task not in (TaskKind.DIAMETER, TaskKind.SSSP, TaskKind.ECCENTRICITY):
        raise DatasetError(f"{task.value} is not a graph-property task")
    splits = [
        [graph_property_instance(task, _rng(seed, stream, i), tuple(node_range))
         for i in range(c)]
        for stream, c in enumerate((count_train, count_val, count_test))
    ]
    ds = DatasetSplit(*splits, seed=seed,
                      config=dict(kind=task.value, count_train=count_train,
                                  count_val=count_val, count_test=count_test,
                                  node_range=list(node_range), families=list(FAMILIES)))
    return normalize_targets(ds) if normalize else ds


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------


def instance_record(inst: TaskInstance) -> dict:
    targets = inst.targets if inst.raw_targets is None else inst.raw_targets
    return {
        "n": inst.graph.num_nodes,
        "edges": inst.graph.edge_list().tolist(),
        "features": inst.features.tolist(),
        "targets": targets.tolist(),
        "mask": None if inst.mask is None else np.asarray(inst.mask).tolist(),
    }


def instance_from_record(rec: dict, kind: TaskKind,
                         normalization: Optional[dict] = None) -> TaskInstance:
    g = build_graph(rec["edges"], rec["n"])
    if kind is TaskKind.RING_TRANSFER:
        targets = np.asarray(rec["targets"], dtype=np.int64)
    else:
        targets = np.asarray(rec["targets"], dtype=float)
    mask = None if rec.get("mask") is None else np.asarray(rec["mask"], dtype=np.int64)
    inst = TaskInstance(g, np.asarray(rec["features"], dtype=float), targets, mask, kind)
    if normalization is not None:
        inst.raw_targets = targets
        inst.targets = (targets - normalization["mean"]) / normalization["std"]
    return inst


def save_dataset(ds: DatasetSplit, directory) -> Path:
    """One ``graphs.jsonl`` per split directory plus ``manifest.json``.

    Targets are written un-normalized; the manifest holds the statistics.
    """
    root = Path(directory)
    counts = {}
    for name, part in ds.splits().items():
        (root / name).mkdir(parents=True, exist_ok=True)
        write_records(root / name / "graphs.jsonl",
                      (instance_record(inst) for inst in part))
        counts[name] = len(part)
    kind = (ds.train or ds.val or ds.test)[0].task_kind.value
    write_json(root / "manifest.json", {
        "generator_version": ds.version,
        "seed": ds.seed,
        "task_kind": kind,
        "config": ds.config,
        "counts": counts,
        "normalization": ds.normalization,
    })
    return root


def load_dataset(directory) -> DatasetSplit:
    root = Path(directory)
    manifest = read_json(root / "manifest.json")
    kind = TaskKind(manifest["task_kind"])
    norm = manifest.get("normalization")
    parts = [
        [instance_from_record(r, kind, norm) for r in read_records(root / name / "graphs.jsonl")]
        for name in ("train", "val", "test")
    ]
    return DatasetSplit(*parts, seed=manifest["seed"], version=manifest["generator_version"],
                        config=manifest["config"], normalization=norm)
