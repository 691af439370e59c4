"""Loading, windowing, folds and normalisation."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfx.data import (
    ChannelKind,
    ChannelMeta,
    DailyPanel,
    NormStats,
    TimeSeriesDataset,
    count_channel_mask,
    denormalize,
    fit_norm_stats,
    get_fold,
    load_dataset,
    make_windows,
    normalize,
    rolling_origin_folds,
    split_indices,
)
from rlfx.errors import ArgumentError, LoadError


def _load(cfg, paths, **over):
    p = {k: paths[k] for k in ("rl_kpi", "ws", "static", "distances")}
    p.update(over)
    return load_dataset(p["rl_kpi"], p["ws"], p["static"], p["distances"], cfg.schema())


def _toy_panel(days_per_link, C=2):
    L, D = len(days_per_link), max(days_per_link)
    values = np.arange(L * C * D, dtype=float).reshape(L, C, D)
    failures = np.zeros((L, D), dtype=np.int64)
    span = np.array([[0, d] for d in days_per_link])
    meta = tuple(ChannelMeta(f"k{c}", ChannelKind.RL_KPI) for c in range(C))
    dates = np.arange(D).astype("datetime64[D]")
    return DailyPanel(tuple(f"L{i}" for i in range(L)), dates, values, failures, meta, span)


# --------------------------------------------------------------------- loading


def test_load_two_link_ten_day_fixture(small_tables):
    cfg, paths = small_tables
    panel = _load(cfg, paths)
    assert panel.values.shape[0] == 2 and panel.values.shape[2] == 10
    ds = make_windows(panel, 4)
    assert ds.n_instances == 2 * (10 - 4)
    assert ds.T == 4
    assert ds.static is not None and ds.static.shape[0] == ds.n_instances


def test_load_missing_column_names_it(small_tables, tmp_path):
    cfg, paths = small_tables
    df = pd.read_csv(paths["rl_kpi"]).drop(columns=["bbe"])
    bad = tmp_path / "rl.csv"
    df.to_csv(bad, index=False)
    with pytest.raises(LoadError, match="bbe"):
        _load(cfg, paths, rl_kpi=bad)


def test_load_empty_file(small_tables, tmp_path):
    cfg, paths = small_tables
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(LoadError):
        _load(cfg, paths, rl_kpi=empty)


def test_load_forward_fills_nan(small_tables, tmp_path):
    cfg, paths = small_tables
    df = pd.read_csv(paths["rl_kpi"])
    row = df.index[(df.link_id == "L000")][5]
    expected = df.loc[row - 1, "bbe"]
    df.loc[row, "bbe"] = np.nan
    bad = tmp_path / "rl.csv"
    df.to_csv(bad, index=False)
    panel = _load(cfg, paths, rl_kpi=bad)
    c = panel.channel_names.index("bbe")
    assert panel.values[0, c, 5] == pytest.approx(expected)
    ref = _load(cfg, paths)
    assert np.allclose(np.delete(panel.values[0, c], 5), np.delete(ref.values[0, c], 5), rtol=1e-12)


# ------------------------------------------------------------------- windowing


def test_windows_six_days():
    ds = make_windows(_toy_panel([6]), 4)
    assert ds.n_instances == 2
    assert list(ds.day_index) == [4, 5]


def test_windows_five_days_one_instance():
    ds = make_windows(_toy_panel([5]), 4)
    assert ds.n_instances == 1 and ds.day_index[0] == 4


def test_windows_short_link_skipped_with_warning():
    with pytest.warns(UserWarning, match="skipped 1"):
        ds = make_windows(_toy_panel([8, 4]), 4)
    assert set(ds.link_ids) == {"L0"}


def test_windows_bad_n_days():
    with pytest.raises(ArgumentError):
        make_windows(_toy_panel([6]), 0)


def test_windows_content_and_positional_channel():
    panel = _toy_panel([7])
    ds = make_windows(panel, 3)
    assert np.array_equal(ds.values[1, :2], panel.values[0, :, 1:4])
    assert ds.channel_meta[-1].kind is ChannelKind.POSITIONAL
    assert np.allclose(ds.values[:, -1], [0, 0.5, 1.0])


# ----------------------------------------------------------------------- folds


def test_folds_100_examples():
    f = {x.fold_id: x for x in rolling_origin_folds(100, 5)}
    assert (f["F4"].train, f["F4"].val, f["F4"].test) == (range(0, 70), range(70, 90), range(90, 100))
    assert f["F3"].extent == 90
    assert (f["F3"].train, f["F3"].val, f["F3"].test) == (range(0, 63), range(63, 81), range(81, 90))


def test_folds_50_smallest_extent():
    folds = rolling_origin_folds(50, 5)
    assert len(folds) == 5
    e = 50
    for _ in range(4):
        e = int(np.floor(e * 0.9))
    assert min(f.extent for f in folds) == e == 32


def test_folds_too_small():
    with pytest.raises(ArgumentError):
        rolling_origin_folds(5, 5)


@settings(max_examples=60, deadline=None)
@given(st.integers(30, 5000), st.integers(1, 6))
def test_fold_partition_invariant(total, k):
    try:
        folds = rolling_origin_folds(total, k)
    except ArgumentError:
        return
    for f in folds:
        assert f.train.start == 0
        assert f.train.stop == f.val.start and f.val.stop == f.test.start
        assert f.test.stop == f.extent <= total
        assert len(f.train) > 0 and len(f.val) > 0 and len(f.test) > 0
    assert folds[-1].extent == total


def test_get_fold_unknown():
    with pytest.raises(ArgumentError):
        get_fold(100, "F9")


def test_split_by_label_day(small_panel):
    panel, _, _ = small_panel
    ds = make_windows(panel)
    fold = get_fold(ds.n_days_total, "F4")
    parts = split_indices(ds, fold)
    for name in ("train", "val", "test"):
        rng_ = getattr(fold, name)
        assert all(ds.day_index[i] in rng_ for i in parts[name])
    assert not set(parts["train"]) & set(parts["test"])


# --------------------------------------------------------------- normalisation


def _toy_ds(values, days):
    values = np.asarray(values, dtype=float)
    meta = tuple(ChannelMeta(f"k{c}", ChannelKind.RL_KPI) for c in range(values.shape[1]))
    n = len(values)
    return TimeSeriesDataset(values, np.zeros(n), meta, np.array(["L"] * n, dtype=object),
                             np.arange(n).astype("datetime64[D]"), np.asarray(days), 100)


def test_normalize_examples():
    # channel 0: train mean 5, std 2; channel 1 constant
    vals = np.zeros((100, 2, 1))
    vals[:70, 0, 0] = np.where(np.arange(70) % 2, 3.0, 7.0)
    vals[70:, 0, 0] = 9.0
    vals[:, 1] = 4.0
    ds = _toy_ds(vals, np.arange(100))
    out, stats = normalize(ds, get_fold(100, "F4"))
    assert stats.mean[0] == 5.0 and stats.std[0] == 2.0
    assert np.all(out.values[70:, 0] == 2.0)
    assert np.all(out.values[:, 1] == 0.0)


def test_normalize_uses_train_only_three_instances():
    vals = np.array([[[1.0, 3.0]], [[5.0, 7.0]], [[100.0, 300.0]]])
    fold = rolling_origin_folds(10, 1)[0]  # train [0,7)
    ds = _toy_ds(vals, [1, 2, 9])
    out, stats = normalize(ds, fold)
    mu, sd = 4.0, np.std([1.0, 3.0, 5.0, 7.0])
    assert stats.mean[0] == pytest.approx(mu) and stats.std[0] == pytest.approx(sd)
    assert np.allclose(out.values[2, 0], (vals[2, 0] - mu) / sd)
    assert np.allclose(denormalize(out, stats).values, vals)


def test_log_scale_round_trip(rng):
    x = np.abs(rng.normal(size=(30, 3, 4))) * 50
    x[:, 2] -= 60
    ds = _toy_ds(x, np.arange(30))
    mask = count_channel_mask(ds)
    assert mask.tolist() == [True, True, False]
    stats = fit_norm_stats(x, mask)
    z = stats.apply(x)
    assert np.allclose(z.mean(axis=(0, 2)), 0) and np.allclose(z.std(axis=(0, 2)), 1)
    assert np.allclose(stats.invert(z), x)
    back = NormStats.from_dict(stats.to_dict())
    assert np.array_equal(back.apply(x), z)


def test_fit_norm_stats_empty():
    with pytest.raises(ArgumentError):
        fit_norm_stats(np.zeros((0, 2, 3)))
