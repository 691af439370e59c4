"""Classification metrics, fidelity curves and the report bundle."""

from __future__ import annotations

import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfx.attribution import ChannelImportance
from rlfx.data import ChannelKind, ChannelMeta, TimeSeriesDataset
from rlfx.errors import ArgumentError
from rlfx.evaluation import (
    ClassificationReport,
    FidelityMode,
    RankingSource,
    curve_auc,
    deletion_test,
    insertion_test,
    prf1,
    random_baseline,
    random_ranking,
    report,
    summarize,
)
from rlfx.explain.shapley import BackgroundSet

# -------------------------------------------------------------------- metrics


def test_prf1_examples():
    r = prf1([0.9, 0.1], [1, 0])
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    r = prf1([0.1, 0.2], [1, 0])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    r = prf1([0.9, 0.9, 0.1], [1, 0, 1])
    assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)
    assert (r.tp, r.fp, r.fn, r.tn) == (1, 1, 1, 0)


def test_prf1_errors():
    with pytest.raises(ArgumentError):
        prf1([0.5], [1, 0])
    with pytest.raises(ArgumentError):
        prf1([], [])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_prf1_properties(pairs):
    p, y = zip(*pairs)
    r = prf1(p, y)
    assert 0 <= r.f1 <= 1 and r.tp + r.fp + r.fn + r.tn == len(p)
    if r.precision + r.recall > 0:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_curve_auc():
    assert curve_auc([1, 1, 1]) == pytest.approx(1.0)
    assert curve_auc([0, 1]) == pytest.approx(0.5)
    assert curve_auc([1, 0, 0, 0]) == pytest.approx(1 / 6)
    with pytest.raises(ArgumentError):
        curve_auc([1])


# ------------------------------------------------------------ random rankings


def test_random_ranking_examples():
    assert random_ranking(3, 5) == random_ranking(3, 5)
    assert random_ranking(1, 0) == [0]
    with pytest.raises(ArgumentError):
        random_ranking(0, 0)


def test_random_ranking_uniform():
    counts = {p: 0 for p in itertools.permutations(range(3))}
    for s in range(10_000):
        counts[tuple(random_ranking(3, s))] += 1
    freqs = np.array(list(counts.values())) / 10_000
    assert np.all(np.abs(freqs - 1 / 6) <= 0.02)
    chi2 = float(((np.array(list(counts.values())) - 10_000 / 6) ** 2 / (10_000 / 6)).sum())
    assert chi2 < 20.5  # 5 dof, p ~ 0.001


# ------------------------------------------------------------- fidelity tests


class _ChannelModel:
    """Predicts failure when the chosen channels are all above their mean of zero."""

    def __init__(self, channels, C):
        from rlfx.nn import ModelSpec, Variant

        self.channels = list(channels)
        self.spec = ModelSpec(Variant.LTRANS, tuple(range(C)), (ChannelKind.RL_KPI,) * C, T=2, d_model=4, n_heads=2)

    def predict_proba(self, ds):
        v = ds.values[:, self.channels].mean(axis=2)
        return np.all(v > 0.5, axis=1).astype(float)


def _fixture(C=4, n=40, seed=0, relevant=(0,)):
    r = np.random.default_rng(seed)
    vals = r.uniform(-1, 0, (n, C, 2))
    y = (np.arange(n) % 2).astype(float)
    for c in relevant:
        vals[y == 1, c] = 1.0
    meta = tuple(ChannelMeta(f"c{i}", ChannelKind.RL_KPI) for i in range(C))
    ds = TimeSeriesDataset(vals, y, meta, np.array(["L"] * n, dtype=object),
                           np.arange(n).astype("datetime64[D]"), np.arange(n), n)
    bg = BackgroundSet(np.zeros((3, C, 2)))
    return ds, bg


def test_insertion_single_channel_model():
    ds, bg = _fixture()
    model = _ChannelModel([0], 4)
    full = prf1(model.predict_proba(ds), ds.labels).f1
    curve = insertion_test(model, ds, [0, 1, 2, 3], bg)
    assert curve.steps[0] == (0, 0.0)
    assert curve.steps[1][1] == full == 1.0
    assert curve.mode is FidelityMode.INSERTION and curve.granularity == "channel"
    assert [k for k, _ in curve.steps] == [0, 1, 2, 3, 4]


def test_deletion_top_channel_drops_to_zero():
    ds, bg = _fixture(relevant=(0, 2))
    model = _ChannelModel([0, 2], 4)
    d = deletion_test(model, ds, [2, 0, 1, 3], bg)
    assert d.steps[0][1] == 1.0 and d.steps[1][1] <= 0.1
    rev = deletion_test(model, ds, [3, 1, 0, 2], bg)
    assert rev.steps[1][1] >= 0.9 and rev.steps[2][1] >= 0.9
    rnd = random_baseline(model, ds, bg, FidelityMode.DELETION)
    assert rnd.ranking_source is RankingSource.RANDOM
    assert rnd.auc > d.auc
    ins = insertion_test(model, ds, [2, 0, 1, 3], bg)
    assert ins.auc > random_baseline(model, ds, bg, "INSERTION").auc


def test_fidelity_rejects_bad_ranking():
    ds, bg = _fixture()
    with pytest.raises(ArgumentError):
        insertion_test(_ChannelModel([0], 4), ds, [0, 0, 1, 2], bg)


# --------------------------------------------------------------------- report


def _reports(f1s, variant="LTRANS"):
    return [ClassificationReport(f, f, f, 0, 0, 0, 0, f"F{i}", variant) for i, f in enumerate(f1s)]


def test_summary_constant_folds():
    s = summarize(_reports([0.9] * 5))
    assert s["LTRANS"]["f1"]["mean"] == pytest.approx(0.9)
    assert s["LTRANS"]["f1"]["std"] == pytest.approx(0.0, abs=1e-15)


def test_report_two_folds(tmp_path):
    imp = ChannelImportance(np.array([[0.3, -0.1]]), np.array([0.3, -0.1]), 0,
                            (ChannelMeta("a", ChannelKind.RL_KPI), ChannelMeta("b", ChannelKind.RL_KPI)), ("x",))
    ds, bg = _fixture()
    curve = insertion_test(_ChannelModel([0], 4), ds, [0, 1, 2, 3], bg)
    paths = report(_reports([0.6, 0.8]), [curve], imp, tmp_path, [("x", "a", 0, 1.5, 0.2)])
    summary = json.loads(paths["summary.json"].read_text())
    f1 = summary["models"]["LTRANS"]["f1"]
    assert f1["mean"] == pytest.approx(0.7) and f1["std"] == pytest.approx(0.1)
    assert summary["models"]["LTRANS"]["folds"] == ["F0", "F1"]
    with open(paths["importance_bar.csv"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["channel_name"] for r in rows] == ["a", "b"]
    with open(paths["fidelity_curves.csv"]) as fh:
        assert len(list(csv.DictReader(fh))) == 5
    assert paths["shap_vs_value.csv"].read_text().count("\n") == 2


def test_report_missing_fold_named(tmp_path):
    reps = [r for r in _reports([0.9] * 5) if r.fold_id != "F2"]
    with pytest.raises(ArgumentError, match="F2"):
        report(reps, [], None, tmp_path)


def test_report_variants_must_share_folds():
    reps = _reports([0.9, 0.8]) + _reports([0.7], "GENTRAP")
    with pytest.raises(ArgumentError):
        summarize(reps)
