"""Synthetic network generator and nearest-station graph."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfx.data import make_windows
from rlfx.errors import ArgumentError
from rlfx.synth import FailureRule, SynthConfig, generate, knearest_stations


@pytest.fixture(scope="module")
def desk():
    return generate(SynthConfig(seed=1, n_links=50, n_days=200, target_failure_rate=0.003))


def test_realized_rate_in_band(desk):
    panel, truth, _ = desk
    ds = make_windows(panel)
    rate = ds.labels.mean()
    assert 0.0024 <= rate <= 0.0036
    assert 0.0024 <= truth.realized_rate <= 0.0036


def test_generate_deterministic(desk):
    panel2, truth2, graph2 = generate(SynthConfig(seed=1, n_links=50, n_days=200, target_failure_rate=0.003))
    panel, truth, graph = desk
    assert np.array_equal(panel.values, panel2.values)
    assert np.array_equal(panel.failures, panel2.failures)
    assert np.array_equal(graph.neighbor_map, graph2.neighbor_map)
    assert truth == truth2


def test_every_positive_has_both_triggers_on_prior_day(desk):
    panel, truth, _ = desk
    assert truth.trigger_names == ("unavail_second", "bbe")
    names = panel.channel_names
    cs = [names.index(n) for n in truth.trigger_names]
    assert set(cs) == set(truth.relevant_channels)
    links, days = np.nonzero(panel.failures)
    assert len(links) > 0
    for l, d in zip(links, days):
        for c, n in zip(cs, truth.trigger_names):
            assert panel.values[l, c, d - 1] > truth.thresholds[n]


def test_different_seed_differs(desk):
    other, _, _ = generate(SynthConfig(seed=2, n_links=50, n_days=200, target_failure_rate=0.003))
    assert not np.array_equal(other.values, desk[0].values)


def test_bad_configs():
    with pytest.raises(ArgumentError):
        SynthConfig(target_failure_rate=0.0)
    with pytest.raises(ArgumentError):
        SynthConfig(n_stations=2, K=3)
    with pytest.raises(ArgumentError):
        FailureRule(trigger_channels=("bbe",), combination="XOR")
    with pytest.raises(ArgumentError):
        SynthConfig(failure_rule=FailureRule(trigger_channels=("nope",)))


def test_knn_line():
    g = knearest_stations(np.zeros((1, 2)), np.array([[3.0, 0], [1.0, 0], [2.0, 0]]), K=2)
    assert g.neighbor_map.tolist() == [[1, 2]]


def test_knn_tie_lower_index():
    g = knearest_stations(np.zeros((1, 2)), np.array([[0, 1.0], [1.0, 0]]), K=1)
    assert g.neighbor_map.tolist() == [[0]]


def test_knn_bad_k():
    with pytest.raises(ArgumentError):
        knearest_stations(np.zeros((1, 2)), np.zeros((2, 2)), K=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_knn_matches_bruteforce(seed, K):
    r = np.random.default_rng(seed)
    links, stations = r.uniform(0, 50, (7, 2)), r.uniform(0, 50, (20, 2))
    g = knearest_stations(links, stations, K)
    for l in range(7):
        d = [(float(np.hypot(*(links[l] - stations[s]))), s) for s in range(20)]
        assert g.neighbor_map[l].tolist() == [s for _, s in sorted(d)[:K]]
