"""Command-line driver.

Precedence for every setting: command-line flag, then the config file, then
the built-in default.  Exit codes: 0 success, 1 invalid input, 2 runtime or
numerical failure.  Failures print one JSON record to stderr.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from ._kernels import BACKEND
from .datasets import (
    GENERATOR_VERSION,
    DatasetError,
    TaskKind,
    gen_barbell,
    gen_graph_property,
    gen_ring_transfer,
    load_dataset,
    ring_graph,
    sample_family_graph,
    save_dataset,
)
from .graph import GraphError, ScaledLaplacianOp, build_graph
from .io import eigenvalue_svg, load_checkpoint, save_checkpoint, write_json
from .layers import ChebLayerParams, LayerError, ModelConfig, init_model
from .stability import (
    StabilityError,
    build_layer_jacobian,
    eig_spectrum,
    jacobian_norm_scan,
    mp_moment_experiment,
    sensitivity_matrix,
)
from .training import (
    Loss,
    TrainConfig,
    TrainingError,
    finite_difference_check,
    random_check_case,
    train_model,
)

logger = logging.getLogger("stablecheb")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


GRAPH_SCHEMA = _obj({
    "family": {"enum": ["path", "cycle", "ring", "erdos_renyi", "barabasi_albert",
                        "caterpillar", "star", "grid", "ladder"]},
    "n": {"type": "integer", "minimum": 1},
    "edges": {"type": "array", "items": {"type": "array", "items": _int,
                                         "minItems": 2, "maxItems": 2}},
    "seed": _int,
})

MODEL_SCHEMA = _obj({
    "mode": {"enum": ["vanilla", "stable"]},
    "K": {"type": "integer", "minimum": 0},
    "hidden": _pos_int,
    "layers": {"type": "integer", "minimum": 0},
    "epsilon": {"type": "number", "exclusiveMinimum": 0},
    "gamma": _nonneg,
    "activation": {"enum": ["identity", "tanh", "relu"]},
    "mlp_layers": _pos_int,
    "readout": {"enum": ["node", "graph_mean"]},
    "lambda_max": {"type": "number", "exclusiveMinimum": 0},
    "input_dim": _pos_int,
    "output_dim": _pos_int,
})

TRAINING_SCHEMA = _obj({
    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "epochs": {"type": "integer", "minimum": 0},
    "batch_size": _pos_int,
    "optimizer": {"enum": ["adam", "adamw"]},
    "weight_decay": _nonneg,
    "loss": {"enum": ["mse", "ce", "bce"]},
    "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
})

_counts = {"oneOf": [_pos_int, {"type": "array", "items": {"type": "integer", "minimum": 0},
                                "minItems": 3, "maxItems": 3}]}

DATASET_SCHEMA = _obj({
    "kind": {"enum": [k.value for k in TaskKind]},
    "path": {"type": "string"},
    "seed": _int,
    "count": _counts,
    "count_train": _pos_int,
    "count_val": {"type": "integer", "minimum": 0},
    "count_test": {"type": "integer", "minimum": 0},
    "node_range": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
    "normalize": {"type": "boolean"},
    "ring_size": {"type": "integer", "minimum": 2},
    "num_classes": {"type": "integer", "minimum": 2},
    "total_nodes": _pos_int,
    "bridge_length": _pos_int,
    "target_rule": {"enum": ["mean", "mirror"]},
})

SPECTRUM_SCHEMA = _obj({
    "graph": GRAPH_SCHEMA,
    "modes": {"type": "array", "items": {"enum": ["vanilla", "stable"]}, "minItems": 1},
    "K_values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    "d": _pos_int,
    "sigma": _nonneg,
    "epsilon": {"type": "number", "exclusiveMinimum": 0},
    "gamma": _nonneg,
    "init": {"enum": ["gaussian", "identity", "checkpoint"]},
    "checkpoint": {"type": "string"},
    "layer": {"type": "integer", "minimum": 0},
    "bins": _pos_int,
})

SENSITIVITY_SCHEMA = _obj({
    "graph": GRAPH_SCHEMA,
    "mode": {"enum": ["vanilla", "stable"]},
    "K": {"type": "integer", "minimum": 0},
    "layers": _pos_int,
    "d": _pos_int,
    "sigma": _nonneg,
    "epsilon": {"type": "number", "exclusiveMinimum": 0},
    "gamma": _nonneg,
    "checkpoint": {"type": "string"},
})

GRADCHECK_SCHEMA = _obj({
    "models": _pos_int,
    "modes": {"type": "array", "items": {"enum": ["vanilla", "stable"]}, "minItems": 1},
    "activations": {"type": "array", "items": {"enum": ["identity", "tanh", "relu"]},
                    "minItems": 1},
    "losses": {"type": "array", "items": {"enum": ["mse", "ce", "bce"]}, "minItems": 1},
    "tolerance": {"type": "number", "exclusiveMinimum": 0},
})

MP_SCHEMA = _obj({
    "lambdas": {"type": "array", "items": _num, "minItems": 1},
    "K_values": {"type": "array", "items": _pos_int, "minItems": 1},
    "sigma": _nonneg,
    "d": _pos_int,
    "trials": _pos_int,
})

NORM_SCAN_SCHEMA = _obj({
    "graph": GRAPH_SCHEMA,
    "K": {"type": "integer", "minimum": 0},
    "d": _pos_int,
    "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                 "minItems": 2},
    "seeds": _pos_int,
    "sigma": _nonneg,
    "vanilla_depth": {"type": "integer", "minimum": 0},
    "vanilla_K": {"type": "integer", "minimum": 0},
    "vanilla_sigma": _nonneg,
})

CONFIG_SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "output": {"type": "string"},
    "repeats": _pos_int,
    "model": MODEL_SCHEMA,
    "training": TRAINING_SCHEMA,
    "dataset": DATASET_SCHEMA,
    "spectrum": SPECTRUM_SCHEMA,
    "sensitivity": SENSITIVITY_SCHEMA,
    "gradcheck": GRADCHECK_SCHEMA,
    "mp_check": MP_SCHEMA,
    "norm_scan": NORM_SCAN_SCHEMA,
})


def validate_config(cfg) -> dict:
    if cfg is None:
        cfg = {}
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        if exc.validator == "additionalProperties":
            extra = sorted(set(exc.instance) - set(exc.schema.get("properties", {})))
            field = ".".join([*map(str, exc.absolute_path), extra[0]]) if extra else where
            raise ConfigError(f"unknown key {field!r}", field) from None
        raise ConfigError(f"{where}: {exc.message}", where) from None
    return cfg


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", "--config") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}", "--config") from None
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _versions() -> dict:
    import networkx
    return {
        "stablecheb": __version__,
        "generator": GENERATOR_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "networkx": networkx.__version__,
        "backend": BACKEND,
    }


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory", "--out")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite",
                          "--out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _graph_from(spec: dict | None, seed: int):
    spec = spec or {"family": "path", "n": 10}
    if "edges" in spec:
        if "n" not in spec:
            raise ConfigError("graph.n is required with graph.edges", "graph.n")
        return build_graph(spec["edges"], spec["n"])
    family, n = spec.get("family", "path"), spec.get("n", 10)
    # deterministic families keep their natural labels so outputs read by hop distance
    if family in ("ring", "cycle"):
        return ring_graph(n)
    if family == "path":
        return build_graph([(i, i + 1) for i in range(n - 1)], n)
    if family == "star":
        return build_graph([(0, v) for v in range(1, n)], n)
    rng = np.random.default_rng(spec.get("seed", seed))
    return sample_family_graph(family, n, rng)


def _default_loss(kind: TaskKind) -> str:
    return "ce" if kind is TaskKind.RING_TRANSFER else "mse"


def _default_readout(kind: TaskKind) -> str:
    return "graph_mean" if kind is TaskKind.DIAMETER else "node"


def build_dataset(section: dict, seed: int):
    kind = TaskKind(section["kind"])
    s = section.get("seed", seed)
    if kind is TaskKind.RING_TRANSFER:
        return gen_ring_transfer(section.get("ring_size", 10), section.get("num_classes", 5),
                                 section.get("count", 1000), s)
    if kind is TaskKind.BARBELL:
        return gen_barbell(section.get("total_nodes", 50), section.get("bridge_length", 4),
                           section.get("count", 1000), s, section.get("target_rule", "mean"))
    return gen_graph_property(kind, section.get("count_train", 5120),
                              section.get("count_val", 640), section.get("count_test", 1280),
                              tuple(section.get("node_range", (25, 35))), s,
                              section.get("normalize", True))


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss", "metric", "seconds"])
        for r in rows:
            w.writerow([r["epoch"], r["split"], repr(float(r["loss"])),
                         repr(float(r["metric"])), f"{r['seconds']:.3f}"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    if "dataset" not in cfg or "kind" not in cfg["dataset"]:
        raise ConfigError("generate needs dataset.kind", "dataset.kind")
    ds = build_dataset(cfg["dataset"], seed)
    _prepare_out(out, force)
    save_dataset(ds, out)
    return {"output": str(out), "counts": [len(ds.train), len(ds.val), len(ds.test)]}


def _task_metric(kind: TaskKind, loss: Loss, test_metric: float) -> tuple[str, float]:
    if loss is Loss.MSE and kind in (TaskKind.DIAMETER, TaskKind.SSSP, TaskKind.ECCENTRICITY):
        return "log10_mse", float(np.log10(test_metric))
    return ("accuracy" if loss is not Loss.MSE else "mse"), float(test_metric)


def _one_run(args):
    run_dir, ds, base_seed, model_cfg, train_cfg, index = args
    seed = int(base_seed) + index
    inst = ds.train[0]
    d_raw = inst.features.shape[1]
    kind = inst.task_kind
    loss = Loss(train_cfg.get("loss", _default_loss(kind)))
    if loss is Loss.CROSS_ENTROPY:
        d_out = int(max(int(np.max(i.targets)) for i in ds.train)) + 1
        if kind is TaskKind.RING_TRANSFER:
            d_out = max(d_out, ds.config.get("num_classes", d_out))
    else:
        d_out = np.asarray(inst.targets).reshape(np.asarray(inst.targets).shape[0], -1).shape[1]
    mc = {k: v for k, v in model_cfg.items() if k not in ("input_dim", "output_dim")}
    mc.setdefault("readout", _default_readout(kind))
    config = ModelConfig(**mc)
    model = init_model(config, d_raw, d_out, np.random.default_rng(seed))
    tc = TrainConfig(seed=seed, loss=loss, **{k: v for k, v in train_cfg.items() if k != "loss"})
    t0 = time.perf_counter()
    best, hist = train_model(model, ds, tc)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "metrics.csv", hist.rows)
    save_checkpoint(run_dir / "checkpoint.json", best,
                    {"model": model_cfg, "training": train_cfg}, seed)
    name, value = _task_metric(kind, loss, hist.test_metric)
    return {"repeat": index, "seed": seed, "best_epoch": hist.best_epoch,
            "best_val_loss": hist.best_val, "test_loss": hist.test_loss,
            "test_metric": hist.test_metric, "metric": name, "value": value,
            "diverged": hist.diverged, "skipped_steps": hist.skipped_steps,
            "seconds": time.perf_counter() - t0}


def cmd_train(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    section = cfg.get("dataset")
    if not section:
        raise ConfigError("train needs a dataset section", "dataset")
    ds_path = section.get("path")
    if ds_path:
        if not (Path(ds_path) / "manifest.json").is_file():
            raise ConfigError(f"dataset directory {ds_path} has no manifest.json",
                              "dataset.path")
        ds = load_dataset(ds_path)
    elif "kind" in section:
        ds = build_dataset(section, seed)
    else:
        raise ConfigError("dataset needs either path or kind", "dataset")
    model_cfg = dict(cfg.get("model", {}))
    train_cfg = dict(cfg.get("training", {}))
    inst = ds.train[0]
    d_raw = inst.features.shape[1]
    if "input_dim" in model_cfg and model_cfg["input_dim"] != d_raw:
        raise ConfigError(f"model.input_dim={model_cfg['input_dim']} but the dataset has "
                          f"{d_raw} feature channels", "model.input_dim")
    if "output_dim" in model_cfg:
        t = np.asarray(inst.targets)
        d_t = 1 if t.ndim < 2 else t.shape[1]
        if inst.task_kind is not TaskKind.RING_TRANSFER and model_cfg["output_dim"] != d_t:
            raise ConfigError(f"model.output_dim={model_cfg['output_dim']} but targets have "
                              f"{d_t} channels", "model.output_dim")
    readout = model_cfg.get("readout", _default_readout(inst.task_kind))
    if (readout == "graph_mean") != (inst.task_kind is TaskKind.DIAMETER):
        raise ConfigError(f"readout {readout!r} does not fit task {inst.task_kind.value}",
                          "model.readout")
    loss = train_cfg.get("loss", _default_loss(inst.task_kind))
    if (loss == "ce") != (inst.task_kind is TaskKind.RING_TRANSFER):
        raise ConfigError(f"loss {loss!r} does not fit task {inst.task_kind.value}",
                          "training.loss")
    # validate the remaining fields before any work
    try:
        ModelConfig(**{k: v for k, v in model_cfg.items() if k not in ("input_dim",
                                                                        "output_dim")})
        TrainConfig(**train_cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    repeats = cfg.get("repeats", 1)
    _prepare_out(out, force)
    write_json(out / "manifest.json", {"command": "train", "config": cfg, "seed": seed,
                                       "seeds": [seed + i for i in range(repeats)],
                                       "versions": _versions()})
    jobs = [(out / f"run_{i}", ds, seed, model_cfg, train_cfg, i)
            for i in range(repeats)]
    if threads > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    values = np.array([r["value"] for r in rows])
    summary = {"runs": rows, "metric": rows[0]["metric"], "mean": float(values.mean()),
               "std": float(values.std()), "repeats": repeats,
               "diverged_runs": int(sum(r["diverged"] for r in rows))}
    write_json(out / "summary.json", summary)
    if summary["diverged_runs"] == repeats:
        raise TrainingError("every run diverged")
    return {"output": str(out), "metric": summary["metric"], "mean": summary["mean"],
            "std": summary["std"]}


def _spectrum_params(mode, K, d, sec, rng):
    init = sec.get("init", "gaussian")
    if init == "identity":
        W = np.zeros((K + 1, d, d))
        if mode == "vanilla":
            W[0] = np.eye(d)
        return ChebLayerParams(W, mode, sec.get("epsilon", 0.1), sec.get("gamma", 0.0),
                               "identity")
    W = sec.get("sigma", 0.5) * rng.standard_normal((K + 1, d, d))
    return ChebLayerParams(W, mode, sec.get("epsilon", 0.1), sec.get("gamma", 0.0), "identity")


def _histogram(x: np.ndarray, bins: int):
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-9 * max(1.0, abs(lo)):
        # stable spectra put every real part on one line
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(x, bins=bins, range=(lo, hi))


def cmd_spectrum(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    sec = cfg.get("spectrum", {})
    graph = _graph_from(sec.get("graph"), seed)
    _prepare_out(out, force)
    results = []
    if sec.get("init") == "checkpoint":
        if "checkpoint" not in sec:
            raise ConfigError("init: checkpoint needs spectrum.checkpoint", "spectrum.checkpoint")
        model, _, _ = load_checkpoint(sec["checkpoint"])
        p = model.layers[sec.get("layer", 0)]
        jobs = [(p.mode.value, p.K, ChebLayerParams(p.weights, p.mode, p.epsilon, p.gamma,
                                                    "identity"))]
        lmax = model.lambda_max
    else:
        d = sec.get("d", 4)
        jobs = []
        for mode, K in itertools.product(sec.get("modes", ["vanilla", "stable"]),
                                         sec.get("K_values", list(range(1, 9)))):
            rng = np.random.default_rng([seed, K])
            jobs.append((mode, K, _spectrum_params(mode, K, d, sec, rng)))
        lmax = 2.0
    op = ScaledLaplacianOp(graph, lmax)
    for mode, K, params in jobs:
        J = build_layer_jacobian(op, params)
        rep = eig_spectrum(J)
        if not rep.converged:
            raise StabilityError(f"eigensolver did not converge ({mode}, K={K})")
        stem = f"spectrum_{mode}_K{K}"
        bins = sec.get("bins", 30)
        hist_re, edges_re = _histogram(rep.eigenvalues.real, bins)
        hist_im, edges_im = _histogram(rep.eigenvalues.imag, bins)
        write_json(out / f"{stem}.json", {
            "mode": mode, "K": K, "epsilon": params.epsilon, "gamma": params.gamma,
            "sigma": sec.get("sigma", 0.5), "seed": seed, "init": sec.get("init", "gaussian"),
            "n": graph.num_nodes, "matrix_dim": rep.matrix_dim,
            "spectral_norm": rep.spectral_norm, "spectral_radius": rep.spectral_radius,
            "max_abs_real_part": rep.max_abs_real_part, "max_residual": rep.max_residual,
            "eigenvalues": rep.eigen_pairs(), "singular_values": rep.singular_values,
            "histogram_real": {"counts": hist_re, "edges": edges_re},
            "histogram_imag": {"counts": hist_im, "edges": edges_im},
        })
        (out / f"{stem}.svg").write_text(eigenvalue_svg(rep.eigenvalues, f"{mode} K={K}"))
        results.append({"mode": mode, "K": K, "spectral_radius": rep.spectral_radius,
                        "spectral_norm": rep.spectral_norm})
    write_json(out / "manifest.json", {"command": "spectrum", "config": cfg, "seed": seed,
                                       "versions": _versions(), "results": results})
    return {"output": str(out), "spectra": len(results)}


def cmd_sensitivity(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    sec = cfg.get("sensitivity", {})
    graph = _graph_from(sec.get("graph"), seed)
    if "checkpoint" in sec:
        model, _, _ = load_checkpoint(sec["checkpoint"])
        layers, lmax = model.layers, model.lambda_max
    else:
        rng = np.random.default_rng(seed)
        K, d, L = sec.get("K", 2), sec.get("d", 1), sec.get("layers", 1)
        layers = [ChebLayerParams(sec.get("sigma", 1.0) * rng.standard_normal((K + 1, d, d)),
                                  sec.get("mode", "vanilla"), sec.get("epsilon", 0.1),
                                  sec.get("gamma", 0.0), "identity") for _ in range(L)]
        lmax = 2.0
    res = sensitivity_matrix(layers, graph, lambda_max=lmax)
    _prepare_out(out, force)
    write_json(out / "sensitivity.json", {"matrix": res.matrix, "convention": res.convention,
                                          "n": graph.num_nodes, "layers": len(layers),
                                          "seed": seed, "config": cfg})
    return {"output": str(out), "n": graph.num_nodes}


def cmd_gradcheck(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    sec = cfg.get("gradcheck", {})
    tol = sec.get("tolerance", 1e-5)
    _prepare_out(out, force)
    records = []
    for mode, act, loss in itertools.product(sec.get("modes", ["vanilla", "stable"]),
                                             sec.get("activations", ["identity", "tanh", "relu"]),
                                             sec.get("losses", ["mse", "ce", "bce"])):
        worst = 0.0
        for i in range(sec.get("models", 20)):
            rng = np.random.default_rng([seed, i])
            model, graph, X, y = random_check_case(rng, mode, act, loss)
            worst = max(worst, finite_difference_check(model, graph, X, y, kind=loss))
        records.append({"mode": mode, "activation": act, "loss": loss,
                        "max_rel_error": worst, "passed": worst < tol})
    write_json(out / "gradcheck.json", {"tolerance": tol, "seed": seed, "results": records})
    bad = [r for r in records if not r["passed"]]
    if bad:
        raise TrainingError(f"{len(bad)} gradient cells exceed {tol}: "
                            + ", ".join(f"{r['mode']}/{r['activation']}/{r['loss']}"
                                        for r in bad))
    return {"output": str(out), "max_rel_error": max(r["max_rel_error"] for r in records)}


def cmd_mp_check(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    sec = cfg.get("mp_check", {})
    _prepare_out(out, force)
    rows = []
    for K in sec.get("K_values", [1, 2, 3]):
        rep = mp_moment_experiment(sec.get("lambdas", [0.25, 0.5, 1.0]), K,
                                   sec.get("sigma", 1.0), sec.get("d", 256),
                                   sec.get("trials", 200), seed)
        rows += [{**r.__dict__, "within_3se": r.within()} for r in rep.records]
    write_json(out / "moments.json", {"scaling": "entries ~ N(0, sigma^2 / d)", "seed": seed,
                                      "records": rows})
    return {"output": str(out), "within_3se": all(r["within_3se"] for r in rows)}


def cmd_norm_scan(cfg: dict, out: Path, seed: int, force: bool, threads: int) -> dict:
    sec = cfg.get("norm_scan", {})
    graph = _graph_from(sec.get("graph"), seed)
    scan = jacobian_norm_scan(graph, sec.get("K", 3), sec.get("d", 4),
                              sec.get("epsilons", [0.4, 0.2, 0.1, 0.05, 0.025]),
                              sec.get("seeds", 20), sec.get("sigma", 0.05),
                              vanilla_depth=sec.get("vanilla_depth", 8),
                              vanilla_K=sec.get("vanilla_K", 5),
                              vanilla_sigma=sec.get("vanilla_sigma", 0.5), seed0=seed)
    _prepare_out(out, force)
    write_json(out / "norm_scan.json", {
        "table": [{"epsilon": e, "mean_norm": v, "slope": s} for e, v, s in scan.table()],
        "slopes": scan.slopes, "mean_slope": scan.mean_slope,
        "vanilla_depth": scan.depth, "vanilla_log_norms_mean": scan.vanilla_log_norms.mean(0)
        if scan.vanilla_log_norms.size else [],
        "vanilla_slopes": scan.vanilla_slopes, "seed": seed, "config": cfg,
    })
    return {"output": str(out), "mean_slope": scan.mean_slope}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "spectrum": cmd_spectrum,
    "sensitivity": cmd_sensitivity,
    "gradcheck": cmd_gradcheck,
    "mp-check": cmd_mp_check,
    "norm-scan": cmd_norm_scan,
}


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    common.add_argument("--seed", type=_u64, help="base seed (overrides config)")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent runs")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="stablecheb", parents=[common],
                                description="Vanilla and Stable ChebNet experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def _error(kind: str, message: str, code: int, field: str | None = None) -> int:
    rec = {"error": kind, "message": message, "exit_code": code}
    if field:
        rec["field"] = field
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", "--threads")
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = Path(args.out or cfg.get("output") or f"runs/{args.command}")
        result = COMMANDS[args.command](cfg, out, int(seed), args.force, args.threads)
    except (ConfigError, DatasetError, GraphError, StabilityError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_INVALID, getattr(exc, "field", None))
    except (LayerError, TrainingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_RUNTIME)
    except ValueError as exc:
        return _error(type(exc).__name__, str(exc), EXIT_INVALID)
    print(json.dumps(result, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
