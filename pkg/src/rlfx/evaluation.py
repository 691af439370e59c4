"""Classification metrics, insertion/deletion fidelity curves and report files."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .attribution import ChannelImportance, importance_records
from .data import TimeSeriesDataset
from .errors import ArgumentError
from .explain.shapley import BackgroundSet, SaliencyMap


@dataclass(frozen=True)
class ClassificationReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    fold_id: str = ""
    model_variant: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def prf1(probabilities, labels, threshold: float = 0.5, fold_id: str = "", model_variant: str = "") -> ClassificationReport:
    """Precision, recall and F1 of class 1; undefined ratios are reported as 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ArgumentError(f"probabilities {p.shape} and labels {y.shape} differ in length")
    if p.size == 0:
        raise ArgumentError("cannot score an empty prediction set")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClassificationReport(precision, recall, f1, tp, fp, fn, tn, fold_id, model_variant)


class FidelityMode(str, Enum):
    INSERTION = "INSERTION"
    DELETION = "DELETION"


class RankingSource(str, Enum):
    SHAP = "SHAP"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class FidelityCurve:
    """F1 after changing the top-k ranked channels, k = 0..C.

    ``granularity`` records that whole channels (all time steps) are
    inserted or deleted at once.
    """

    mode: FidelityMode
    ranking_source: RankingSource
    steps: tuple[tuple[int, float], ...]
    auc: float
    ranking: tuple[int, ...] = ()
    granularity: str = "channel"

    @property
    def f1(self) -> np.ndarray:
        return np.array([f for _, f in self.steps])

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "ranking_source": self.ranking_source.value,
                "steps": [list(s) for s in self.steps], "auc": self.auc, "ranking": list(self.ranking),
                "granularity": self.granularity}


def curve_auc(values: Sequence[float]) -> float:
    """Trapezoid area of ``values`` placed evenly on ``[0, 1]``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ArgumentError("a curve needs at least two points")
    dx = 1.0 / (v.size - 1)
    return float(dx * (v.sum() - 0.5 * (v[0] + v[-1])))


def random_ranking(C: int, seed: int) -> list[int]:
    if C < 1:
        raise ArgumentError(f"C must be >= 1, got {C}")
    return np.random.default_rng(seed).permutation(C).tolist()


def _n_rankable(model, dataset: TimeSeriesDataset) -> int:
    return dataset.n_channels + (1 if model.spec.use_static_branch else 0)


def _fidelity(model, test_set: TimeSeriesDataset, ranking, baseline: BackgroundSet, mode: FidelityMode,
              source: RankingSource) -> FidelityCurve:
    C = _n_rankable(model, test_set)
    ranking = [int(c) for c in ranking]
    if sorted(ranking) != list(range(C)):
        raise ArgumentError(f"ranking must be a permutation of 0..{C - 1}")
    if baseline.instances.shape[1:] != test_set.values.shape[1:]:
        raise ArgumentError(f"baseline shape {baseline.instances.shape[1:]} differs from {test_set.values.shape[1:]}")
    mean_vals = baseline.instances.mean(axis=0)
    has_static = model.spec.use_static_branch
    mean_static = baseline.static.mean(axis=0) if has_static and baseline.static is not None else None
    D = test_set.n_channels
    steps = []
    for k in range(C + 1):
        head = set(ranking[:k])
        true_set = head if mode is FidelityMode.INSERTION else set(range(C)) - head
        values = test_set.values.copy()
        masked = [c for c in range(D) if c not in true_set]
        values[:, masked] = mean_vals[masked]
        ds = test_set.with_values(values)
        if has_static and D not in true_set:
            ds = _replace_static(ds, np.broadcast_to(mean_static, test_set.static.shape))
        steps.append((k, prf1(model.predict_proba(ds), test_set.labels).f1))
    return FidelityCurve(mode, source, tuple(steps), curve_auc([f for _, f in steps]), tuple(ranking))


def _replace_static(ds: TimeSeriesDataset, static: np.ndarray) -> TimeSeriesDataset:
    return replace(ds, static=np.array(static))


def insertion_test(model, test_set: TimeSeriesDataset, ranking, baseline: BackgroundSet,
                   source: RankingSource = RankingSource.SHAP) -> FidelityCurve:
    """Insert channels in ranked order into an all-masked input; masked = background mean."""
    return _fidelity(model, test_set, ranking, baseline, FidelityMode.INSERTION, RankingSource(source))


def deletion_test(model, test_set: TimeSeriesDataset, ranking, baseline: BackgroundSet,
                  source: RankingSource = RankingSource.SHAP) -> FidelityCurve:
    """Mask channels in ranked order, starting from the unmasked input."""
    return _fidelity(model, test_set, ranking, baseline, FidelityMode.DELETION, RankingSource(source))


def random_baseline(model, test_set: TimeSeriesDataset, baseline: BackgroundSet, mode: FidelityMode | str,
                    seeds: Sequence[int] = tuple(range(10))) -> FidelityCurve:
    """Mean curve over seeded random rankings."""
    mode = FidelityMode(mode)
    C = _n_rankable(model, test_set)
    curves = [_fidelity(model, test_set, random_ranking(C, s), baseline, mode, RankingSource.RANDOM) for s in seeds]
    mean = np.mean([c.f1 for c in curves], axis=0)
    return FidelityCurve(mode, RankingSource.RANDOM, tuple((k, float(f)) for k, f in enumerate(mean)),
                         curve_auc(mean))


# ---------------------------------------------------------------------------
# reports


def _fold_number(fold_id: str) -> int:
    m = re.fullmatch(r"F(\d+)", fold_id)
    if not m:
        raise ArgumentError(f"bad fold id {fold_id!r}")
    return int(m.group(1))


def check_folds(reports: Sequence[ClassificationReport]) -> dict[str, list[ClassificationReport]]:
    """Group reports by variant; every variant must cover the same gap-free folds."""
    if not reports:
        raise ArgumentError("report needs at least one fold")
    by_variant: dict[str, list[ClassificationReport]] = {}
    for r in reports:
        by_variant.setdefault(r.model_variant, []).append(r)
    fold_sets = {}
    for variant, rs in by_variant.items():
        ids = [r.fold_id for r in rs]
        if len(set(ids)) != len(ids):
            raise ArgumentError(f"duplicate folds for model {variant!r}: {sorted(ids)}")
        nums = sorted(_fold_number(i) for i in ids)
        missing = sorted(set(range(nums[0], nums[-1] + 1)) - set(nums))
        if missing:
            raise ArgumentError(f"missing fold(s) {', '.join(f'F{m}' for m in missing)} for model {variant!r}")
        fold_sets[variant] = tuple(nums)
    if len(set(fold_sets.values())) > 1:
        raise ArgumentError(f"models cover different folds: {fold_sets}")
    return {v: sorted(rs, key=lambda r: _fold_number(r.fold_id)) for v, rs in sorted(by_variant.items())}


def summarize(reports: Sequence[ClassificationReport]) -> dict:
    groups = check_folds(reports)
    out = {}
    for variant, rs in groups.items():
        entry = {"folds": [r.fold_id for r in rs]}
        for metric in ("precision", "recall", "f1"):
            vals = np.array([getattr(r, metric) for r in rs])
            entry[metric] = {"mean": float(vals.mean()), "std": float(vals.std())}
        out[variant] = entry
    return out


def shap_value_pairs(maps: Sequence[SaliencyMap], values: np.ndarray, channel_names: Sequence[str]) -> list[tuple]:
    """``(instance_id, channel, t, feature value, phi)`` rows for density plots.

    ``values[i]`` is the raw ``C x T`` input of ``maps[i]``.
    """
    rows = []
    for m, v in zip(maps, values):
        for c, name in enumerate(channel_names):
            for t in range(m.phi.shape[1]):
                rows.append((m.instance_id, name, t, float(v[c, t]), float(m.phi[c, t])))
    return rows


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def report(
    per_fold_reports: Sequence[ClassificationReport],
    curves: Sequence[FidelityCurve],
    importance: ChannelImportance | None,
    out_dir: str | Path,
    shap_pairs: Sequence[tuple] = (),
) -> dict[str, Path]:
    """Write summary.json, boxplot.csv, importance_bar.csv, fidelity_curves.csv, shap_vs_value.csv."""
    groups = check_folds(per_fold_reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("summary.json", "boxplot.csv", "importance_bar.csv", "fidelity_curves.csv", "shap_vs_value.csv")}
    summary = {
        "models": summarize(per_fold_reports),
        "fidelity": [{"mode": c.mode.value, "ranking_source": c.ranking_source.value, "auc": c.auc} for c in curves],
    }
    paths["summary.json"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_csv(paths["boxplot.csv"], ["model_variant", "fold_id", "precision", "recall", "f1"],
               [(r.model_variant, r.fold_id, float(r.precision), float(r.recall), float(r.f1))
                for rs in groups.values() for r in rs])
    records = importance_records(importance) if importance is not None else []
    _write_csv(paths["importance_bar.csv"], ["channel_name", "kind", "psi", "abs_share"],
               [(r["name"], r["kind"], r["psi"], r["abs_share"]) for r in records])
    _write_csv(paths["fidelity_curves.csv"], ["mode", "ranking_source", "n_features_changed", "x", "f1", "auc"],
               [(c.mode.value, c.ranking_source.value, k, k / (len(c.steps) - 1), float(f), c.auc)
                for c in curves for k, f in c.steps])
    _write_csv(paths["shap_vs_value.csv"], ["instance_id", "channel_name", "t", "feature_value", "phi"], shap_pairs)
    return paths
