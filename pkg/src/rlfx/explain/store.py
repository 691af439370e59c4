"""Saliency store: long-format CSV, per-instance JSON sidecar and a PRTH bulk tensor."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import LoadError
from ..tensorio import write_tensor
from .shapley import SaliencyMap

STATIC_PREFIX = "static:"


def save_saliency(
    maps: Sequence[SaliencyMap],
    channel_names: Sequence[str],
    out_dir: str | Path,
    static_names: Sequence[str] = (),
) -> dict[str, Path]:
    """Write ``saliency.csv``, ``meta.json`` and ``saliency.prth`` under ``out_dir``.

    Static-feature attributions appear in the CSV as channel
    ``static:<name>`` with ``t = 0``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "saliency.csv", "meta": out / "meta.json", "tensor": out / "saliency.prth"}
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "channel_name", "t", "phi"])
        for m in maps:
            for c, name in enumerate(channel_names):
                for t in range(m.phi.shape[1]):
                    w.writerow([m.instance_id, name, t, repr(float(m.phi[c, t]))])
            if m.phi_static is not None:
                for name, v in zip(static_names, m.phi_static):
                    w.writerow([m.instance_id, STATIC_PREFIX + name, 0, repr(float(v))])
    meta = {
        "channel_names": list(channel_names),
        "static_names": list(static_names),
        "instances": [
            {
                "instance_id": m.instance_id,
                "base_value": m.base_value,
                "model_output": m.model_output,
                "P": m.P_used,
                "seed": m.seed,
                "normalized": m.normalized,
                "phi_static": None if m.phi_static is None else [float(v) for v in m.phi_static],
            }
            for m in maps
        ],
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True))
    C = len(channel_names)
    T = maps[0].phi.shape[1] if maps else 0
    write_tensor(paths["tensor"], np.stack([m.phi for m in maps]) if maps else np.zeros((0, C, T)))
    return paths


def load_saliency(out_dir: str | Path) -> tuple[list[SaliencyMap], list[str], list[str]]:
    """Read maps back from ``saliency.csv`` + ``meta.json`` (full float64 precision)."""
    out = Path(out_dir)
    csv_path, meta_path = out / "saliency.csv", out / "meta.json"
    for p in (csv_path, meta_path):
        if not p.exists():
            raise LoadError(f"saliency store incomplete: {p} missing")
    meta = json.loads(meta_path.read_text())
    names = meta["channel_names"]
    index = {n: i for i, n in enumerate(names)}
    cells: dict[str, dict[tuple[int, int], float]] = {}
    T = 0
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["channel_name"].startswith(STATIC_PREFIX):
                continue
            t = int(row["t"])
            T = max(T, t + 1)
            cells.setdefault(row["instance_id"], {})[(index[row["channel_name"]], t)] = float(row["phi"])
    maps = []
    for entry in meta["instances"]:
        phi = np.zeros((len(names), T))
        for (c, t), v in cells.get(entry["instance_id"], {}).items():
            phi[c, t] = v
        ps = entry.get("phi_static")
        maps.append(SaliencyMap(phi, entry["base_value"], entry["model_output"], entry["instance_id"],
                                P_used=entry["P"], seed=entry["seed"], normalized=entry["normalized"],
                                phi_static=None if ps is None else np.array(ps)))
    return maps, names, meta["static_names"]
