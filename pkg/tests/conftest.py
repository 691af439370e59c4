"""Shared fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from rlfx.synth import SynthConfig, generate, write_tables


@pytest.fixture(scope="session")
def small_tables(tmp_path_factory):
    """CSV tables of a 2-link, 10-day synthetic network."""
    out = tmp_path_factory.mktemp("tables")
    cfg = SynthConfig(seed=0, n_links=2, n_days=10, n_stations=3, target_failure_rate=0.1)
    return cfg, write_tables(cfg, out)


@pytest.fixture(scope="session")
def small_panel():
    cfg = SynthConfig(seed=2, n_links=6, n_days=60, n_stations=4, target_failure_rate=0.05)
    return generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
