"""Model checkpoints: a JSON header followed by one PRTH block per weight.

Layout::

    header_len: uint64 (little endian) | header: UTF-8 JSON | PRTH blocks

The header carries the spec, normalisation statistics, parameter count,
seed and the ordered weight names; blocks follow in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..data import NormStats
from ..errors import LoadError
from ..tensorio import read_tensor_stream, write_tensor_stream
from .models import ModelSpec
from .training import TrainedModel

FORMAT_VERSION = 1


def save_model(model: TrainedModel, path: str | Path) -> None:
    names = sorted(model.weights)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "norm_stats": model.norm_stats.to_dict(),
        "param_count": model.param_count,
        "seed": model.seed,
        "weights": [{"name": n, "shape": list(model.weights[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            write_tensor_stream(fh, model.weights[n])


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise LoadError(f"{path}: truncated checkpoint header")
        (n,) = struct.unpack("<Q", raw)
        try:
            header = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LoadError(f"{path}: unreadable checkpoint header ({exc})") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise LoadError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        weights = {}
        for entry in header["weights"]:
            w = read_tensor_stream(fh).astype(np.float64)
            if list(w.shape) != entry["shape"]:
                raise LoadError(f"{path}: weight {entry['name']} has shape {w.shape}, header says {entry['shape']}")
            weights[entry["name"]] = w
    spec = ModelSpec.from_dict(header["spec"])
    model = TrainedModel(spec, weights, NormStats.from_dict(header["norm_stats"]), seed=header["seed"])
    if model.param_count != header["param_count"]:
        raise LoadError(f"{path}: parameter count {model.param_count} != header {header['param_count']}")
    return model
