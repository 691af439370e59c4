"""Pipeline configuration: YAML loading, defaults and validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .nn.models import Variant
from .nn.training import ClassWeighting, TrainConfig
from .synth import FailureRule, SynthConfig

DEFAULTS: dict[str, Any] = {
    "data": {"window_days": 4},
    "model": {"variant": "LTRANS", "channels": "all"},
    "train": {"batch_size": 1024, "learning_rate": 0.01, "epochs": 100, "class_weighting": "INVERSE_FREQUENCY",
              "early_stop_patience": 100, "log_scale_counts": True},
    "explain": {"P": 200, "normalize": True, "background_size": 50, "max_instances": 20},
    "prune": {"coverage": 0.95, "alpha": 0},
    "eval": {"random_seeds": list(range(10)), "thresholds": [0.5]},
    "out_dir": "runs",
}

MODEL_KEYS = {"variant", "channels", "d_model", "n_heads", "n_encoder_blocks", "d_ff", "lstm_layer_sizes", "K",
              "use_static_branch", "d_gnn", "d_static", "d_fuse", "activation"}
SYNTH_KEYS = {"seed", "n_links", "n_stations", "n_days", "target_failure_rate", "geometry_extent", "K",
              "hours_per_day", "start_date", "distractor_ratio", "coupled_ws_channel", "coupling_strength",
              "failure_rule", "rl_kpis", "ws_channels"}
PATH_KEYS = ("rl_kpi", "ws", "static", "distances")
SEED_FIELDS = ("data.synth.seed", "train.seed", "explain.seed")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _get(cfg: dict, dotted: str, default=None):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def read_config(path: str | Path) -> dict:
    """Parse a YAML config file (no defaults applied)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {str(exc).splitlines()[0]}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    raw["_base_dir"] = str(path.resolve().parent)
    return raw


def validate(raw: dict) -> list[str]:
    """Every violated constraint, as human-readable lines (empty when valid)."""
    v: list[str] = []
    base = Path(raw.get("_base_dir", "."))
    cfg = _merge(DEFAULTS, {k: val for k, val in raw.items() if k != "_base_dir"})
    data = cfg.get("data", {})
    synth, paths = data.get("synth"), data.get("paths")
    if (synth is None) == (paths is None):
        v.append("data: exactly one of data.synth or data.paths is required")
    if synth is not None:
        if not isinstance(synth, dict):
            v.append("data.synth must be a mapping")
        else:
            for k in sorted(set(synth) - SYNTH_KEYS):
                v.append(f"data.synth.{k}: unknown field")
            if "seed" not in synth:
                v.append("data.synth.seed: required (explicit seed)")
            try:
                build_synth_config({**synth, "seed": synth.get("seed", 0)})
            except Exception as exc:  # constructor validation
                v.append(f"data.synth: {exc}")
    if paths is not None:
        if not isinstance(paths, dict):
            v.append("data.paths must be a mapping")
        else:
            for k in PATH_KEYS:
                if k not in paths:
                    v.append(f"data.paths.{k}: required")
                elif not (base / str(paths[k])).exists():
                    v.append(f"data.paths.{k}: file not found: {paths[k]}")
    wd = data.get("window_days")
    if not isinstance(wd, int) or wd < 1:
        v.append("data.window_days: integer >= 1 required")

    model = cfg.get("model", {})
    for k in sorted(set(model) - MODEL_KEYS):
        v.append(f"model.{k}: unknown field")
    try:
        Variant(model.get("variant"))
    except ValueError:
        v.append(f"model.variant: one of {[x.value for x in Variant]} required")
    ch = model.get("channels")
    if not (ch in ("all", "rl") or (isinstance(ch, list) and ch and all(isinstance(c, str) for c in ch))):
        v.append("model.channels: 'all', 'rl' or a list of channel names")
    dm, nh = model.get("d_model", 16), model.get("n_heads", 2)
    if isinstance(dm, int) and isinstance(nh, int) and nh > 0 and dm % nh:
        v.append("model.d_model: must be divisible by model.n_heads")

    train = cfg.get("train", {})
    if "seed" not in train:
        v.append("train.seed: required (explicit seed)")
    try:
        build_train_config({**train, "seed": train.get("seed", 0)})
    except Exception as exc:
        v.append(f"train: {exc}")
    lr = train.get("learning_rate")
    if isinstance(lr, (int, float)) and lr <= 0:
        v.append("train.learning_rate: must be > 0")

    ex = cfg.get("explain", {})
    if "seed" not in ex:
        v.append("explain.seed: required (explicit seed)")
    if not isinstance(ex.get("P"), int) or ex["P"] < 1:
        v.append("explain.P: integer >= 1 required")
    if not isinstance(ex.get("background_size"), int) or ex["background_size"] < 1:
        v.append("explain.background_size: integer >= 1 required")
    if not isinstance(ex.get("max_instances"), int) or ex["max_instances"] < 1:
        v.append("explain.max_instances: integer >= 1 required")
    if not isinstance(ex.get("normalize"), bool):
        v.append("explain.normalize: boolean required")

    pr = cfg.get("prune", {})
    cov = pr.get("coverage")
    if not isinstance(cov, (int, float)) or isinstance(cov, bool) or not 0 < cov <= 1:
        v.append("prune.coverage ∈ (0,1] required")
    if pr.get("alpha") not in (0, 1):
        v.append("prune.alpha ∈ {0,1} required")

    ev = cfg.get("eval", {})
    rs = ev.get("random_seeds")
    if not isinstance(rs, list) or not rs or not all(isinstance(s, int) for s in rs):
        v.append("eval.random_seeds: non-empty list of integers required")
    th = ev.get("thresholds")
    if not isinstance(th, list) or not th or not all(isinstance(t, (int, float)) and 0 <= t <= 1 for t in th):
        v.append("eval.thresholds: non-empty list of values in [0,1] required")
    if not isinstance(cfg.get("out_dir"), str):
        v.append("out_dir: path string required")
    for k in sorted(set(raw) - set(DEFAULTS) - {"_base_dir"}):
        v.append(f"{k}: unknown top-level field")
    return v


def build_synth_config(d: dict) -> SynthConfig:
    d = dict(d)
    rule = d.pop("failure_rule", None)
    for key in ("rl_kpis", "ws_channels"):
        if key in d:
            d[key] = tuple(d[key])
    if rule is not None:
        d["failure_rule"] = FailureRule(**rule)
    return SynthConfig(**d)


def build_train_config(d: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=int(d["batch_size"]),
        learning_rate=float(d["learning_rate"]),
        epochs=int(d["epochs"]),
        class_weighting=ClassWeighting(d["class_weighting"]),
        seed=int(d["seed"]),
        early_stop_patience=int(d["early_stop_patience"]),
        log_scale_counts=bool(d.get("log_scale_counts", True)),
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Validated configuration with defaults applied."""

    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path, seed_override: int | None = None) -> "PipelineConfig":
        raw = read_config(path)
        base = Path(raw.pop("_base_dir"))
        cfg = _merge(DEFAULTS, raw)
        if seed_override is not None:
            for dotted in SEED_FIELDS:
                parent, _, leaf = dotted.rpartition(".")
                node = _get(cfg, parent)
                if isinstance(node, dict):
                    node[leaf] = int(seed_override)
        problems = validate({**cfg, "_base_dir": str(base)})
        if problems:
            raise ConfigError(f"invalid config {path}: " + "; ".join(problems))
        return cls(cfg, base)

    def get(self, dotted: str, default=None):
        return _get(self.raw, dotted, default)

    @property
    def synth(self) -> SynthConfig | None:
        s = self.get("data.synth")
        return None if s is None else build_synth_config(s)

    def data_path(self, key: str) -> Path:
        return (self.base_dir / str(self.get(f"data.paths.{key}"))).resolve()

    @property
    def train(self) -> TrainConfig:
        return build_train_config(self.get("train"))

    @property
    def seeds(self) -> dict:
        return {f: self.get(f) for f in SEED_FIELDS if self.get(f) is not None}
