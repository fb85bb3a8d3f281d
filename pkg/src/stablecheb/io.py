"""Text serialization: JSON with 17-significant-digit floats, JSONL records,
model checkpoints and SVG eigenvalue plots."""
from __future__ import annotations

import json
import math
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        # JSON has no literal for these; keep them machine-readable
        return json.dumps(str(x))
    s = format(x, ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON text where every float carries 17 significant digits.

    With ``indent`` set, dicts are spread over lines; lists stay on one line.
    """
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Enum):
        return dumps(obj.value)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        if indent is None:
            return "{" + ", ".join(items) + "}"
        pad = "\n" + " " * (indent * (_level + 1))
        return "{" + pad + ("," + pad).join(items) + "\n" + " " * (indent * _level) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_records(path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            count += 1
    return count


def read_records(path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model) -> dict:
    def dense(d):
        return None if d is None else {"weight": d.weight, "bias": d.bias,
                                       "activation": d.activation.value}

    return {
        "encoder": dense(model.encoder),
        "layers": [{"mode": p.mode.value, "epsilon": p.epsilon, "gamma": p.gamma,
                    "activation": p.activation.value, "weights": p.weights}
                   for p in model.layers],
        "readout": model.readout.value,
        "decoder": [dense(d) for d in model.decoder],
        "lambda_max": model.lambda_max,
    }


def model_from_dict(data: dict):
    from .layers import ChebLayerParams, Dense, ModelSpec

    def dense(d):
        if d is None:
            return None
        return Dense(np.asarray(d["weight"], dtype=float).reshape(len(d["weight"]), -1),
                     np.asarray(d["bias"], dtype=float), d["activation"])

    layers = [ChebLayerParams(np.asarray(p["weights"], dtype=float), p["mode"],
                              float(p["epsilon"]), float(p["gamma"]), p["activation"])
              for p in data["layers"]]
    return ModelSpec(dense(data["encoder"]), layers, data["readout"],
                     [dense(d) for d in data["decoder"]], float(data["lambda_max"]))


def save_checkpoint(path, model, config: dict, seed: int) -> None:
    write_json(path, {"config": config, "seed": int(seed), "model": model_to_dict(model)})


def load_checkpoint(path):
    """Returns ``(model, config, seed)``."""
    data = read_json(path)
    return model_from_dict(data["model"]), data["config"], data["seed"]


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def eigenvalue_svg(eigenvalues: np.ndarray, title: str = "", size: int = 480,
                   radius: float | None = None) -> str:
    """Complex-plane scatter with the unit circle drawn."""
    ev = np.asarray(eigenvalues, dtype=complex).reshape(-1)
    extent = max(1.0, float(np.abs(ev).max()) if ev.size else 1.0) if radius is None else radius
    extent *= 1.1
    half = size / 2.0
    s = half / extent

    def px(z):
        return half + z.real * s, half - z.imag * s

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="0" y1="{half:.3f}" x2="{size}" y2="{half:.3f}" stroke="#999" '
        'stroke-width="1"/>',
        f'<line x1="{half:.3f}" y1="0" x2="{half:.3f}" y2="{size}" stroke="#999" '
        'stroke-width="1"/>',
        f'<circle cx="{half:.3f}" cy="{half:.3f}" r="{s:.3f}" fill="none" stroke="#d62728" '
        'stroke-width="1.5" stroke-dasharray="4 3"/>',
    ]
    if title:
        parts.append(f'<text x="8" y="18" font-family="sans-serif" font-size="14">'
                     f'{_escape(title)}</text>')
    for z in ev:
        x, y = px(z)
        parts.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="2.5" fill="#1f77b4" '
                     'fill-opacity="0.7"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
