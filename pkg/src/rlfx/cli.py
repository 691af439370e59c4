"""Command-line pipeline: generate → train → explain → aggregate → prune → refine → evaluate → fidelity → report.

Every stage writes into ``<out>/<stage>/<fold>/`` (``gen-data`` and
``report`` are fold-independent) together with a ``manifest.json``
recording the SHA-256 of the files it read and wrote, the seeds in force
and package versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Callable

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .attribution import (
    ChannelImportance,
    PrunedFeatureSet,
    derive_pruned_spec,
    global_aggregate,
    prune,
    select_tp,
    write_importance_json,
    write_pruning_report,
)
from .config import PipelineConfig, read_config, validate
from .data import ChannelKind, SchemaConfig, TimeSeriesDataset, derive_ws_channels, get_fold, load_dataset, make_windows, split_indices
from .errors import ConfigError, DependencyError, RlfxError
from .evaluation import (
    ClassificationReport,
    FidelityCurve,
    FidelityMode,
    RankingSource,
    deletion_test,
    insertion_test,
    prf1,
    random_baseline,
    report,
    shap_value_pairs,
)
from .explain import BackgroundSet, batch_explain, load_saliency, save_saliency
from .nn.checkpoint import load_model, save_model
from .nn.models import ModelSpec, Variant, default_spec
from .nn.training import train
from .synth import write_tables

log = logging.getLogger("rlfx")

STAGES = ("gen-data", "train", "explain", "aggregate", "prune", "refine", "evaluate", "fidelity", "report")
FOLDS = tuple(f"F{i}" for i in range(5))
TABLES = {"rl_kpi": "rl_kpi.csv", "ws": "ws.csv", "static": "static.csv", "distances": "distances.csv"}


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


class Run:
    """Shared state of one CLI invocation."""

    def __init__(self, cfg: PipelineConfig, out: Path, fold_id: str, workers: int):
        self.cfg, self.out, self.fold_id, self.workers = cfg, out, fold_id, workers
        self._dataset: TimeSeriesDataset | None = None
        self._data_inputs: list[Path] = []

    # -- paths ---------------------------------------------------------
    def stage_dir(self, stage: str, per_fold: bool = True) -> Path:
        d = self.out / stage / self.fold_id if per_fold else self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def need(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise DependencyError(f"missing artifact {path} (run `{producer}` first)")
        return path

    def manifest(self, stage_dir: Path, stage: str, inputs: list[Path], outputs: list[Path]) -> None:
        def rel(p: Path) -> str:
            try:
                return str(p.resolve().relative_to(self.out.resolve()))
            except ValueError:
                return str(p)

        doc = {
            "stage": stage,
            "fold": None if stage in ("gen-data", "report") else self.fold_id,
            "inputs": {rel(p): sha256(p) for p in sorted(set(inputs))},
            "outputs": {rel(p): sha256(p) for p in sorted(set(outputs))},
            "seeds": self.cfg.seeds,
            "config": {k: v for k, v in self.cfg.raw.items() if k != "out_dir"},
            "versions": {"rlfx": __version__, "numpy": np.__version__, "python": platform.python_version()},
        }
        _dump(doc, stage_dir / "manifest.json")

    # -- data ----------------------------------------------------------
    def table_paths(self) -> dict[str, Path]:
        if self.cfg.synth is not None:
            d = self.out / "gen-data"
            return {k: self.need(d / name, "gen-data") for k, name in TABLES.items()}
        return {k: self.cfg.data_path(k) for k in TABLES}

    def schema(self) -> SchemaConfig:
        synth = self.cfg.synth
        if synth is not None:
            return synth.schema()
        s = dict(self.cfg.get("data.schema", {}) or {})
        for key in ("rl_kpis", "ws_channels", "static_columns", "sum_channels"):
            if key in s:
                s[key] = tuple(s[key])
        return SchemaConfig(**s)

    def dataset(self) -> TimeSeriesDataset:
        """Windowed dataset in the layout the configured model family reads."""
        if self._dataset is None:
            paths = self.table_paths()
            panel = load_dataset(paths["rl_kpi"], paths["ws"], paths["static"], paths["distances"], self.schema())
            ds = make_windows(panel, int(self.cfg.get("data.window_days")))
            if Variant(self.cfg.get("model.variant")) in (Variant.LSTM_PLUS, Variant.LLSTM_PLUS):
                ds = derive_ws_channels(ds)
            self._dataset = ds
            self._data_inputs = list(paths.values())
        return self._dataset

    @property
    def data_inputs(self) -> list[Path]:
        self.dataset()
        return self._data_inputs

    def fold(self, ds: TimeSeriesDataset):
        return get_fold(ds.n_days_total, self.fold_id)

    def model_spec(self, ds: TimeSeriesDataset) -> ModelSpec:
        m = dict(self.cfg.get("model"))
        variant = Variant(m.pop("variant"))
        chans = m.pop("channels")
        if chans == "all":
            idx = list(range(ds.n_channels))
        elif chans == "rl":
            idx = ds.channels_of_kind(ChannelKind.RL_KPI, ChannelKind.POSITIONAL)
        else:
            missing = [c for c in chans if c not in ds.channel_names]
            if missing:
                raise ConfigError(f"model.channels: unknown channel(s) {missing}")
            idx = sorted(ds.channel_index(c) for c in chans)
        if "lstm_layer_sizes" in m:
            m["lstm_layer_sizes"] = tuple(m["lstm_layer_sizes"])
        n_static = 0 if ds.static is None else ds.static.shape[1]
        if m.get("use_static_branch") is False:
            n_static = 0
        m.pop("use_static_branch", None)
        return default_spec(variant, ds.channel_meta, idx, T=ds.T, n_static=n_static,
                            K=m.pop("K", self.schema().K), **m)

    def background(self, ds: TimeSeriesDataset) -> BackgroundSet:
        bg_file = self.need(self.out / "explain" / self.fold_id / "background.json", "explain")
        idx = json.loads(bg_file.read_text())["indices"]
        static = None if ds.static is None else ds.static[idx]
        return BackgroundSet(ds.values[idx], static, tuple(idx))


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(run: Run) -> None:
    synth = run.cfg.synth
    if synth is None:
        raise ConfigError("gen-data needs a data.synth section (data.paths configs have nothing to generate)")
    d = run.stage_dir("gen-data", per_fold=False)
    paths = write_tables(synth, d)
    run.manifest(d, "gen-data", [], list(paths.values()))


def _reports(model, ds, fold, variant_name: str) -> dict:
    parts = split_indices(ds, fold)
    p = model.predict_proba(ds)
    out = {}
    for split, idx in parts.items():
        if len(idx):
            out[split] = prf1(p[idx], ds.labels[idx], fold_id=fold.fold_id, model_variant=variant_name).to_dict()
    return out


def stage_train(run: Run) -> None:
    ds = run.dataset()
    fold = run.fold(ds)
    spec = run.model_spec(ds)
    model = train(spec, ds, fold, run.cfg.train)
    d = run.stage_dir("train")
    ckpt = d / "model.ckpt"
    save_model(model, ckpt)
    metrics = d / "metrics.json"
    _dump({"fold": fold.to_dict(), "param_count": model.param_count, "train_log": model.train_log,
           "reports": _reports(model, ds, fold, spec.variant.value)}, metrics)
    run.manifest(d, "train", run.data_inputs, [ckpt, metrics])


def stage_explain(run: Run) -> None:
    ckpt = run.need(run.out / "train" / run.fold_id / "model.ckpt", "train")
    model = load_model(ckpt)
    ds = run.dataset()
    fold = run.fold(ds)
    parts = split_indices(ds, fold)
    p = model.predict_proba(ds)
    split = "test"
    tp = [int(parts["test"][i]) for i in select_tp(p[parts["test"]], ds.labels[parts["test"]])]
    if not tp:
        log.warning("no true positives in the test split; explaining validation true positives")
        split = "val"
        tp = [int(parts["val"][i]) for i in select_tp(p[parts["val"]], ds.labels[parts["val"]])]
    tp = tp[: int(run.cfg.get("explain.max_instances"))]
    seed = int(run.cfg.get("explain.seed"))
    bg = BackgroundSet.from_dataset(ds, parts["train"], int(run.cfg.get("explain.background_size")), seed)
    errors: list = []
    maps = batch_explain(model, ds, tp, int(run.cfg.get("explain.P")), seed, background=bg,
                         normalize=bool(run.cfg.get("explain.normalize")), workers=run.workers, errors=errors)
    d = run.stage_dir("explain")
    paths = save_saliency(maps, ds.channel_names, d, ds.static_names if model.spec.use_static_branch else ())
    bg_file = d / "background.json"
    _dump({"indices": list(bg.source_indices), "explained": tp, "split": split,
           "failed": [[i, m] for i, m in errors]}, bg_file)
    run.manifest(d, "explain", [ckpt] + run.data_inputs, list(paths.values()) + [bg_file])


def stage_aggregate(run: Run) -> None:
    src = run.out / "explain" / run.fold_id
    run.need(src / "saliency.csv", "explain")
    maps, names, _ = load_saliency(src)
    if not maps:
        raise DependencyError(f"no saliency maps in {src} (no true positives were explained)")
    ds = run.dataset()
    if names != ds.channel_names:
        raise DependencyError(f"saliency channels in {src} do not match the dataset")
    imp = global_aggregate(maps, int(run.cfg.get("prune.alpha")), ds.channel_meta)
    d = run.stage_dir("aggregate")
    full, bar = d / "importance_full.json", d / "importance.json"
    _dump(imp.to_dict(), full)
    write_importance_json(imp, bar)
    run.manifest(d, "aggregate", [src / "saliency.csv", src / "meta.json"], [full, bar])


def _load_importance(run: Run) -> tuple[Path, ChannelImportance]:
    path = run.need(run.out / "aggregate" / run.fold_id / "importance_full.json", "aggregate")
    return path, ChannelImportance.from_dict(json.loads(path.read_text()))


def _static_index(imp: ChannelImportance) -> int | None:
    idx = [c for c, m in enumerate(imp.channel_meta) if m.kind is ChannelKind.STATIC]
    return idx[0] if idx else None


def stage_prune(run: Run) -> None:
    imp_path, imp = _load_importance(run)
    ckpt = run.need(run.out / "train" / run.fold_id / "model.ckpt", "train")
    model = load_model(ckpt)
    pruned = prune(imp, float(run.cfg.get("prune.coverage")))
    derived = derive_pruned_spec(model.spec, pruned, _static_index(imp))
    d = run.stage_dir("prune")
    files = [d / "pruned.json", d / "importance.json", d / "pruning_report.json"]
    _dump(pruned.to_dict(), files[0])
    write_importance_json(imp, files[1], pruned)
    write_pruning_report(pruned, derived, files[2])
    run.manifest(d, "prune", [imp_path, ckpt], files)


def stage_refine(run: Run) -> None:
    rep = run.need(run.out / "prune" / run.fold_id / "pruning_report.json", "prune")
    spec = ModelSpec.from_dict(json.loads(rep.read_text())["derived_spec"])
    ds = run.dataset()
    fold = run.fold(ds)
    model = train(spec, ds, fold, run.cfg.train)
    d = run.stage_dir("refine")
    ckpt, metrics = d / "model.ckpt", d / "metrics.json"
    save_model(model, ckpt)
    _dump({"param_count": model.param_count, "train_log": model.train_log,
           "reports": _reports(model, ds, fold, _refined_name(spec))}, metrics)
    run.manifest(d, "refine", [rep] + run.data_inputs, [ckpt, metrics])


def _refined_name(spec: ModelSpec) -> str:
    return f"{spec.variant.value}-refined"


def stage_evaluate(run: Run) -> None:
    ds = run.dataset()
    fold = run.fold(ds)
    test = split_indices(ds, fold)["test"]
    if len(test) == 0:
        raise DependencyError(f"fold {run.fold_id} has an empty test split")
    inputs, reports = [], []
    for stage, name_of in (("train", lambda s: s.variant.value), ("refine", _refined_name)):
        ckpt = run.out / stage / run.fold_id / "model.ckpt"
        if stage == "train":
            run.need(ckpt, "train")
        elif not ckpt.exists():
            continue
        model = load_model(ckpt)
        inputs.append(ckpt)
        p = model.predict_proba(ds)[test]
        for th in run.cfg.get("eval.thresholds"):
            r = prf1(p, ds.labels[test], float(th), run.fold_id, name_of(model.spec)).to_dict()
            r["threshold"] = float(th)
            r["param_count"] = model.param_count
            reports.append(r)
    d = run.stage_dir("evaluate")
    out = d / "classification.json"
    _dump(reports, out)
    run.manifest(d, "evaluate", inputs + run.data_inputs, [out])


def stage_fidelity(run: Run) -> None:
    ckpt = run.need(run.out / "train" / run.fold_id / "model.ckpt", "train")
    imp_path, imp = _load_importance(run)
    model = load_model(ckpt)
    ds = run.dataset()
    fold = run.fold(ds)
    test = ds.subset(split_indices(ds, fold)["test"])
    bg = run.background(ds)
    ranking = imp.ranking()
    if not model.spec.use_static_branch:
        ranking = [c for c in ranking if c < ds.n_channels]
    seeds = [int(s) for s in run.cfg.get("eval.random_seeds")]
    curves = [
        insertion_test(model, test, ranking, bg),
        deletion_test(model, test, ranking, bg),
        random_baseline(model, test, bg, FidelityMode.INSERTION, seeds),
        random_baseline(model, test, bg, FidelityMode.DELETION, seeds),
    ]
    d = run.stage_dir("fidelity")
    out = d / "curves.json"
    _dump([c.to_dict() for c in curves], out)
    run.manifest(d, "fidelity", [ckpt, imp_path, run.out / "explain" / run.fold_id / "background.json"]
                 + run.data_inputs, [out])


def stage_report(run: Run) -> None:
    inputs, reports = [], []
    eval_root = run.out / "evaluate"
    for fid in FOLDS:
        f = eval_root / fid / "classification.json"
        if f.exists():
            inputs.append(f)
            for r in json.loads(f.read_text()):
                if r.get("threshold", 0.5) == 0.5:
                    reports.append(ClassificationReport(**{k: r[k] for k in (
                        "precision", "recall", "f1", "tp", "fp", "fn", "tn", "fold_id", "model_variant")}))
    if not reports:
        raise DependencyError(f"no evaluation results under {eval_root} (run `evaluate` first)")
    curves: list[FidelityCurve] = []
    curves_file = run.out / "fidelity" / run.fold_id / "curves.json"
    if curves_file.exists():
        inputs.append(curves_file)
        for c in json.loads(curves_file.read_text()):
            curves.append(FidelityCurve(FidelityMode(c["mode"]), RankingSource(c["ranking_source"]),
                                        tuple((int(k), float(v)) for k, v in c["steps"]), c["auc"],
                                        tuple(c["ranking"])))
    importance = None
    imp_file = run.out / "aggregate" / run.fold_id / "importance_full.json"
    if imp_file.exists():
        inputs.append(imp_file)
        importance = ChannelImportance.from_dict(json.loads(imp_file.read_text()))
    pairs = []
    sal_dir = run.out / "explain" / run.fold_id
    if (sal_dir / "saliency.csv").exists():
        maps, names, _ = load_saliency(sal_dir)
        ds = run.dataset()
        where = {iid: i for i, iid in enumerate(ds.instance_ids())}
        idx = [where[m.instance_id] for m in maps]
        pairs = shap_value_pairs(maps, ds.values[idx], names)
        inputs.append(sal_dir / "saliency.csv")
    d = run.stage_dir("report", per_fold=False)
    paths = report(reports, curves, importance, d, pairs)
    run.manifest(d, "report", inputs, list(paths.values()))


STAGE_FUNCS: dict[str, Callable[[Run], None]] = {
    "gen-data": stage_gen_data,
    "train": stage_train,
    "explain": stage_explain,
    "aggregate": stage_aggregate,
    "prune": stage_prune,
    "refine": stage_refine,
    "evaluate": stage_evaluate,
    "fidelity": stage_fidelity,
    "report": stage_report,
}


def stage_pipeline(run: Run) -> None:
    for stage in STAGES:
        if stage == "gen-data" and run.cfg.synth is None:
            continue
        log.info("stage %s (%s)", stage, run.fold_id)
        STAGE_FUNCS[stage](run)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML pipeline configuration")
    common.add_argument("--fold", default="F4", choices=FOLDS, help="rolling-origin fold (default: F4)")
    common.add_argument("--out", help="output directory (overrides PRTH_OUT and out_dir)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--workers", type=int, default=1, help="explainer threads (results do not depend on it)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="rlfx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rlfx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "pipeline" else "run every stage")
    v = sub.add_parser("validate-config", help="list every violated config constraint")
    v.add_argument("--config", required=True)
    v.add_argument("--quiet", action="store_true")
    return parser


def _resolve_out(args, cfg: PipelineConfig) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("PRTH_OUT")
    if env:
        return Path(env)
    out = Path(cfg.get("out_dir"))
    return out if out.is_absolute() else cfg.base_dir / out


def _validate_cmd(args) -> int:
    raw = read_config(args.config)
    problems = validate(raw)
    for p in problems:
        print(p)
    if not problems and not args.quiet:
        print(f"{args.config}: ok")
    return 1 if problems else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "validate-config":
            return _validate_cmd(args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = PipelineConfig.load(args.config, args.seed)
        out = _resolve_out(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(out / ".rlfx.lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RlfxError(f"another rlfx run holds the lock on {out}") from None
        try:
            run = Run(cfg, out, args.fold, args.workers)
            (stage_pipeline if args.command == "pipeline" else STAGE_FUNCS[args.command])(run)
        finally:
            lock.release()
    except (RlfxError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"rlfx: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
