"""Shapley explainers, coalition kernels and saliency storage."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfx.data import ChannelKind, ChannelMeta, NormStats, TimeSeriesDataset
from rlfx.errors import ArgumentError, ShapeError
from rlfx.explain import _coalition_py, kernels
from rlfx.explain.shapley import (
    BackgroundSet,
    batch_explain,
    exact_shap,
    mask_with_background,
    sampling_shap,
)
from rlfx.explain.store import load_saliency, save_saliency
from rlfx.nn import ModelSpec, TrainedModel, Variant
from rlfx.nn.training import init_network


def linear_fn(w, c=0.0):
    return lambda X: np.tensordot(np.asarray(X), w, axes=([1, 2], [0, 1])) + c


def and_fn(X):
    X = np.asarray(X)
    return X[:, 0, 0] * X[:, 0, 1]


def nonlinear_fn(X):
    X = np.asarray(X)
    flat = X.reshape(len(X), -1)
    return np.tanh(flat[:, 0] * flat[:, 1] + flat[:, 2:].sum(1)) + 0.3 * np.maximum(flat, 0).prod(1)


# ---------------------------------------------------------------------- masking


def test_mask_identity_and_background():
    X, b = np.arange(4.0).reshape(2, 2), -np.ones((2, 2))
    assert np.array_equal(mask_with_background(X, np.ones((2, 2), bool), b), X)
    assert np.array_equal(mask_with_background(X, np.zeros((2, 2), bool), b), b)


def test_mask_checkerboard():
    X, b = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[10.0, 20.0], [30.0, 40.0]])
    m = np.array([[True, False], [False, True]])
    assert mask_with_background(X, m, b).tolist() == [[1.0, 20.0], [30.0, 4.0]]


def test_mask_shape_error():
    with pytest.raises(ShapeError):
        mask_with_background(np.zeros((2, 2)), np.zeros((2, 3), bool), np.zeros((2, 2)))


def test_background_validation():
    with pytest.raises(ArgumentError):
        BackgroundSet(np.zeros((0, 2, 2)))


# ------------------------------------------------------------------------ exact


def test_exact_constant_model():
    bg = BackgroundSet(np.random.default_rng(0).standard_normal((3, 2, 2)))
    m = exact_shap(lambda X: np.full(len(X), 0.7), np.ones((2, 2)), bg)
    assert np.all(m.phi == 0) and m.base_value == pytest.approx(0.7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_exact_linear_closed_form(seed):
    r = np.random.default_rng(seed)
    w, x, b = r.standard_normal((3, 2)), r.standard_normal((3, 2)), r.standard_normal((1, 3, 2))
    m = exact_shap(linear_fn(w, 0.4), x, BackgroundSet(b))
    assert np.allclose(m.phi, w * (x - b[0]), atol=1e-9, rtol=0)


def test_exact_and_symmetry():
    bg = BackgroundSet(np.zeros((1, 1, 2)))
    m = exact_shap(and_fn, np.ones((1, 2)), bg)
    # coalitions: {} 0, {a} 0, {b} 0, {a,b} 1  ->  phi = 1/2 each
    assert m.phi[0, 0] == pytest.approx(0.5) and m.phi[0, 1] == pytest.approx(0.5)


def test_exact_efficiency(rng):
    bg = BackgroundSet(rng.standard_normal((4, 2, 3)))
    x = rng.standard_normal((2, 3))
    m = exact_shap(nonlinear_fn, x, bg)
    assert abs(m.residual) < 1e-12


def test_exact_too_many_features():
    with pytest.raises(ShapeError):
        exact_shap(and_fn, np.zeros((3, 7)), BackgroundSet(np.zeros((1, 3, 7))))


# --------------------------------------------------------------------- sampling


def test_sampling_constant_model():
    bg = BackgroundSet(np.random.default_rng(0).standard_normal((3, 2, 2)))
    m = sampling_shap(lambda X: np.full(len(X), 0.2), np.ones((2, 2)), bg, P=50, seed=1)
    # marginals are exactly zero; only float rounding of the background mean is redistributed
    assert np.abs(m.phi).max() < 1e-15
    assert np.all(m.stderr == 0)


def test_sampling_converges_to_exact(rng):
    bg = BackgroundSet(rng.standard_normal((4, 2, 3)))
    x = rng.standard_normal((2, 3))
    ex = exact_shap(nonlinear_fn, x, bg)
    sm = sampling_shap(nonlinear_fn, x, bg, P=4000, seed=0, normalize=False)
    assert np.abs(sm.phi - ex.phi).max() < 5 * sm.stderr.max() + 1e-3


def test_sampling_linear_single_background_is_exact(rng):
    w, x, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3)), rng.standard_normal((1, 2, 3))
    sm = sampling_shap(linear_fn(w), x, BackgroundSet(b), P=3, seed=0, normalize=False)
    assert np.allclose(sm.phi, w * (x - b[0]), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_sampling_normalized_additive(seed, P):
    r = np.random.default_rng(seed)
    bg = BackgroundSet(r.standard_normal((3, 2, 3)))
    m = sampling_shap(nonlinear_fn, r.standard_normal((2, 3)), bg, P=P, seed=seed)
    assert abs(m.residual) < 1e-12
    assert m.P_used == P and m.normalized


def test_sampling_deterministic_and_workers(rng):
    bg = BackgroundSet(rng.standard_normal((5, 3, 4)))
    x = rng.standard_normal((3, 4))
    a = sampling_shap(nonlinear_fn, x, bg, P=700, seed=9)
    b = sampling_shap(nonlinear_fn, x, bg, P=700, seed=9, workers=4)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.stderr, b.stderr)
    c = sampling_shap(nonlinear_fn, x, bg, P=700, seed=10)
    assert not np.array_equal(a.phi, c.phi)


def test_sampling_bad_args(rng):
    bg = BackgroundSet(rng.standard_normal((2, 2, 2)))
    with pytest.raises(ArgumentError):
        sampling_shap(nonlinear_fn, np.zeros((2, 2)), bg, P=0, seed=0)
    with pytest.raises(ShapeError):
        sampling_shap(nonlinear_fn, np.zeros((2, 3)), bg, P=5, seed=0)


# ---------------------------------------------------------------------- kernels


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 9))
def test_kernels_match_fallback(seed, M, P):
    r = np.random.default_rng(seed)
    x, bg = r.standard_normal(M), r.standard_normal((4, M))
    perms = np.stack([r.permutation(M) for _ in range(P)])
    idx = r.integers(0, 4, P)
    rows = kernels.coalition_batch(x, bg, perms, idx)
    assert np.array_equal(rows, _coalition_py.coalition_batch(x, bg, perms, idx))
    preds = r.standard_normal(P * (M + 1))
    assert np.array_equal(kernels.scatter_marginals(preds, perms), _coalition_py.scatter_marginals(preds, perms))


def test_coalition_rows_are_prefixes():
    x, bg = np.array([1.0, 2.0, 3.0]), np.zeros((1, 3))
    rows = kernels.coalition_batch(x, bg, np.array([[2, 0, 1]]), np.array([0]))
    assert rows.tolist() == [[0, 0, 0], [0, 0, 3], [1, 0, 3], [1, 2, 3]]


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


# ----------------------------------------------------------------- batch_explain


def _model_and_data(static=False, n=12, seed=0):
    RL = ChannelKind.RL_KPI
    meta = tuple(ChannelMeta(f"k{c}", RL) for c in range(3))
    r = np.random.default_rng(seed)
    S = r.standard_normal((n, 2)) if static else None
    ds = TimeSeriesDataset(r.standard_normal((n, 3, 2)) * 3 + 1, (np.arange(n) % 2).astype(float), meta,
                           np.array([f"L{i % 3}" for i in range(n)], dtype=object),
                           np.arange(n).astype("datetime64[D]"), np.arange(n), n, S,
                           ("a", "b") if static else ())
    if static:
        spec = ModelSpec(Variant.LSTM_PLUS, (0, 2), (RL, RL), T=2, lstm_layer_sizes=(4, 3, 3, 2),
                         use_static_branch=True, n_static=2, d_static=3)
    else:
        spec = ModelSpec(Variant.LTRANS, (0, 2), (RL, RL), T=2, d_model=4, n_heads=2, d_ff=4)
    net = init_network(spec, seed)
    stats = NormStats(ds.values.mean(axis=(0, 2)), ds.values.std(axis=(0, 2)))
    return TrainedModel(spec, net.params(), stats), ds


def test_batch_explain_three_instances():
    model, ds = _model_and_data()
    maps = batch_explain(model, ds, [1, 4, 7], P=30, seed=2, background_size=5)
    assert [m.instance_id for m in maps] == ds.instance_ids([1, 4, 7])
    for m, i in zip(maps, [1, 4, 7]):
        assert m.phi.shape == (3, 2)
        assert np.all(m.phi[1] == 0)  # channel not read by the model
        assert abs(m.residual) < 1e-12
        assert m.seed == 2 ^ i


@pytest.mark.parametrize("static", [False, True])
def test_batch_explain_deterministic_across_workers(static):
    model, ds = _model_and_data(static)
    bg = BackgroundSet.from_dataset(ds, range(6), 4, seed=0)
    a = batch_explain(model, ds, [0, 3, 5, 8], P=40, seed=7, background=bg)
    b = batch_explain(model, ds, [0, 3, 5, 8], P=40, seed=7, background=bg)
    c = batch_explain(model, ds, [0, 3, 5, 8], P=40, seed=7, background=bg, workers=4)
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x.phi, y.phi) and np.array_equal(x.phi, z.phi)
        if static:
            assert x.phi_static.shape == (2,) and np.array_equal(x.phi_static, z.phi_static)
            assert abs(x.residual) < 1e-12


def test_batch_explain_matches_model_output():
    model, ds = _model_and_data()
    maps = batch_explain(model, ds, [2], P=10, seed=0)
    assert maps[0].model_output == pytest.approx(model.predict_proba(ds.subset([2]))[0], abs=1e-12)


def test_batch_explain_bad_selection():
    model, ds = _model_and_data()
    with pytest.raises(ArgumentError):
        batch_explain(model, ds, [99], P=5, seed=0)
    assert batch_explain(model, ds, [], P=5, seed=0) == []


def test_background_from_dataset_deterministic():
    _, ds = _model_and_data()
    a = BackgroundSet.from_dataset(ds, range(10), 4, seed=3)
    b = BackgroundSet.from_dataset(ds, range(10), 4, seed=3)
    assert a.source_indices == b.source_indices and len(set(a.source_indices)) == 4


# ------------------------------------------------------------------------ store


@pytest.mark.parametrize("static", [False, True])
def test_saliency_round_trip(tmp_path, static):
    model, ds = _model_and_data(static)
    maps = batch_explain(model, ds, [0, 1], P=10, seed=0)
    save_saliency(maps, ds.channel_names, tmp_path, list(ds.static_names))
    back, names, snames = load_saliency(tmp_path)
    assert names == ds.channel_names and snames == list(ds.static_names)
    for m, r in zip(maps, back):
        assert np.array_equal(m.phi, r.phi) and m.instance_id == r.instance_id
        assert m.base_value == r.base_value and m.model_output == r.model_output
        if static:
            assert np.array_equal(m.phi_static, r.phi_static)
    assert (tmp_path / "saliency.csv").read_text().startswith("instance_id,channel_name,t,phi")
