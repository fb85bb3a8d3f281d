import itertools

import numpy as np
import pytest

from stablecheb.datasets import (
    FAMILIES,
    DatasetError,
    TaskKind,
    barbell_graph,
    gen_barbell,
    gen_graph_property,
    gen_ring_transfer,
    load_dataset,
    oracle_apsp,
    ring_instance,
    sample_family_graph,
    save_dataset,
)
from stablecheb.graph import build_graph

from conftest import path_graph, random_connected_graph


def _floyd_warshall(g):
    D = np.where(g.adjacency() > 0, 1.0, np.inf)
    np.fill_diagonal(D, 0.0)
    for k in range(g.num_nodes):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D


def test_path_oracle():
    r = oracle_apsp(path_graph(5))
    assert r.diameter == 4
    assert r.eccentricity.tolist() == [4, 3, 2, 3, 4]
    assert r.distances[0].tolist() == [0, 1, 2, 3, 4]


def test_cycle_and_star_and_edge():
    c6 = build_graph([(i, (i + 1) % 6) for i in range(6)], 6)
    r = oracle_apsp(c6)
    assert r.diameter == 3 and (r.eccentricity == 3).all()
    star = build_graph([(0, v) for v in range(1, 6)], 6)
    r = oracle_apsp(star)
    assert r.eccentricity[0] == 1 and (r.eccentricity[1:] == 2).all() and r.diameter == 2
    r = oracle_apsp(build_graph([(0, 1)], 2))
    assert r.distances.tolist() == [[0, 1], [1, 0]] and r.diameter == 1


def test_oracle_disconnected_names_pair():
    with pytest.raises(DatasetError, match="unreachable"):
        oracle_apsp(build_graph([(0, 1)], 3))


def test_bfs_equals_floyd_warshall(rng):
    for _ in range(15):
        g = random_connected_graph(rng, int(rng.integers(2, 31)))
        assert (oracle_apsp(g).distances == _floyd_warshall(g)).all()


def test_distance_invariants(rng):
    for _ in range(10):
        r = oracle_apsp(random_connected_graph(rng, int(rng.integers(2, 25))))
        D = r.distances
        assert (D == D.T).all() and not np.diag(D).any()
        assert r.diameter == r.eccentricity.max() == D.max()
        radius = r.eccentricity.min()
        assert radius <= r.diameter <= 2 * radius
        assert (D[:, :, None] <= D[:, None, :] + D.T[None, :, :]).all()


def test_ring_instance_example():
    inst = ring_instance(4, 2, 1)
    assert inst.features[2].tolist() == [0.0, 1.0]
    assert all(inst.features[v].tolist() == [0.5, 0.5] for v in (0, 1, 3))
    assert inst.mask.tolist() == [0] and inst.targets.tolist() == [1]
    assert oracle_apsp(inst.graph).distances[0, 2] == 2


def test_ring_balanced_and_deterministic():
    a = gen_ring_transfer(10, 5, 100, seed=4)
    b = gen_ring_transfer(10, 5, 100, seed=4)
    for part_a, part_b in zip(a.splits().values(), b.splits().values()):
        labels = [int(i.targets[0]) for i in part_a]
        assert labels == [int(i.targets[0]) for i in part_b]
        counts = np.bincount(labels, minlength=5)
        assert counts.max() - counts.min() <= 1
    # the most common label's frequency is the constant-predictor accuracy
    test = [int(i.targets[0]) for i in a.test]
    assert np.bincount(test).max() / len(test) == pytest.approx(1 / 5)


@pytest.mark.parametrize("size", [3, 5])
def test_ring_rejects_bad_size(size):
    with pytest.raises(DatasetError):
        gen_ring_transfer(size, 2, 10, seed=0)


def test_barbell_layout():
    lay = barbell_graph(20, 4)
    assert len(lay.left) == len(lay.right) == 8
    A = lay.graph.adjacency()
    keep = np.concatenate([lay.left, lay.right])
    cut = A[np.ix_(keep, keep)]
    # with the bridge removed the bells are disconnected
    assert cut[: len(lay.left), len(lay.left):].sum() == 0
    assert oracle_apsp(lay.graph).diameter == 4 + 3


@pytest.mark.parametrize("total,bridge", [(20, 0), (20, 3), (8, 4)])
def test_barbell_preconditions(total, bridge):
    with pytest.raises(DatasetError):
        barbell_graph(total, bridge)


@pytest.mark.parametrize("rule", ["mean", "mirror"])
def test_barbell_zero_predictor_mse_is_one(rule):
    ds = gen_barbell(30, 4, (400, 0, 0), seed=1, target_rule=rule)
    y = np.concatenate([i.targets.reshape(-1) for i in ds.train])
    se = np.sqrt(np.var(y ** 2) / len(ds.train))
    assert abs(np.mean(y ** 2) - 1.0) < 4 * se


def test_barbell_targets_only_see_the_other_bell():
    lay = barbell_graph(16, 2)
    ds = gen_barbell(16, 2, (3, 0, 0), seed=0)
    for inst in ds.train:
        X = inst.features[:, 0]
        m = len(lay.left)
        assert not X[lay.bridge].any()
        assert np.allclose(inst.targets[:m, 0], X[lay.right].sum() / np.sqrt(m))
        assert np.allclose(inst.targets[m:, 0], X[lay.left].sum() / np.sqrt(m))
        assert inst.mask.tolist() == list(lay.left) + list(lay.right)


@pytest.mark.parametrize("family,n", list(itertools.product(FAMILIES, [25, 35])))
def test_families_produce_requested_size(family, n):
    g = sample_family_graph(family, n, np.random.default_rng(0))
    assert g.num_nodes == n


@pytest.mark.parametrize("task", ["diameter", "sssp", "eccentricity"])
def test_graph_property_instances(task):
    ds = gen_graph_property(task, 40, 5, 5, seed=2)
    for inst in ds.train:
        assert 25 <= inst.graph.num_nodes <= 35
        assert (0 <= inst.features[:, 0]).all() and (inst.features[:, 0] <= 1).all()
        r = oracle_apsp(inst.graph)
        raw = inst.raw_targets
        if task == "diameter":
            assert raw.tolist() == [[r.diameter]]
        elif task == "eccentricity":
            assert raw[:, 0].tolist() == r.eccentricity.tolist()
        else:
            assert inst.features.shape[1] == 2 and inst.features[:, 1].sum() == 1
            src = int(np.argmax(inst.features[:, 1]))
            assert raw[:, 0].tolist() == r.distances[src].tolist()
    y = np.concatenate([i.targets.reshape(-1) for i in ds.train])
    assert abs(y.mean()) < 1e-12 and abs(y.std() - 1) < 1e-12


def test_graph_property_rejects_other_tasks():
    with pytest.raises(DatasetError):
        gen_graph_property("barbell", 2, 1, 1)


def test_default_split_sizes():
    import inspect
    sig = inspect.signature(gen_graph_property).parameters
    assert (sig["count_train"].default, sig["count_val"].default,
            sig["count_test"].default) == (5120, 640, 1280)
    assert tuple(sig["node_range"].default) == (25, 35)


def test_generation_is_a_pure_function_of_seed():
    a = gen_graph_property("sssp", 10, 2, 2, seed=11)
    b = gen_graph_property("sssp", 10, 2, 2, seed=11)
    c = gen_graph_property("sssp", 10, 2, 2, seed=12)
    same = [np.array_equal(x.features, y.features) for x, y in zip(a.train, b.train)]
    assert all(same)
    assert not all(np.array_equal(x.features, y.features) for x, y in zip(a.train, c.train))


@pytest.mark.parametrize("make", [
    lambda: gen_graph_property("eccentricity", 6, 2, 2, seed=5),
    lambda: gen_graph_property("diameter", 6, 2, 2, seed=5),
    lambda: gen_ring_transfer(6, 3, (6, 3, 3), seed=5),
    lambda: gen_barbell(14, 2, (4, 2, 2), seed=5),
])
def test_round_trip_bit_exact(tmp_path, make):
    ds = make()
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.seed == ds.seed and back.normalization == ds.normalization
    for p, q in zip(ds.splits().values(), back.splits().values()):
        for a, b in zip(p, q):
            assert np.array_equal(a.graph.indices, b.graph.indices)
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.targets, b.targets)
            assert a.targets.dtype == b.targets.dtype
    save_dataset(back, tmp_path / "e")
    for name in ("manifest.json", "train/graphs.jsonl", "test/graphs.jsonl"):
        assert (tmp_path / "d" / name).read_bytes() == (tmp_path / "e" / name).read_bytes()
