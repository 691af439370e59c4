"""Synthetic radio-link and weather-station telemetry with a planted failure rule.

Radio link KPIs are lognormal AR(1) baselines. A rare "event" process
injects multiplicative bursts on every trigger channel at once; independent
single-channel "distractor" bursts and bursts on non-trigger KPIs add
excursions that must *not* predict failure. A day is a failure day iff the
failure rule fires on the previous day's trigger values. The event
probability is calibrated by bisection so that the realised failure rate
hits the configured target.

Weather channels are hourly seasonal/diurnal processes independent of the
labels unless ``coupled_ws_channel`` is set (negative control).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DEFAULT_RL_KPIS, DEFAULT_WS_CHANNELS, DailyPanel, SchemaConfig, build_panel
from .errors import ArgumentError, SynthError

# lognormal baseline level per KPI; rxlevmax is additive around a dBm level
_RL_LEVEL = {
    "severely_error_second": 2.0,
    "error_second": 10.0,
    "unavail_second": 5.0,
    "bbe": 200.0,
    "capacity": 400.0,
    "extra_kpi": 50.0,
}
_ADDITIVE = {"rxlevmax": (-40.0, 3.0)}
_AR_COEF = 0.7
_AR_SIGMA = 0.25
_BURST_RANGE = (6.0, 12.0)
_NOISE_BURST_PROB = 0.005
_STATIC_LEVELS = {"site_type": ("rural", "suburban", "urban"), "band": ("E", "V", "W")}


@dataclass(frozen=True)
class FailureRule:
    trigger_channels: tuple[str, ...] = ("unavail_second", "bbe")
    thresholds: dict | None = None
    combination: str = "AND"
    noise_flip_prob: float = 0.0
    threshold_quantile: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "trigger_channels", tuple(self.trigger_channels))
        if not self.trigger_channels:
            raise ArgumentError("failure rule needs at least one trigger channel")
        if self.combination not in ("AND", "OR"):
            raise ArgumentError(f"combination must be AND or OR, got {self.combination!r}")
        if not 0.0 <= self.noise_flip_prob <= 0.05:
            raise ArgumentError("noise_flip_prob must be in [0, 0.05]")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_links: int = 50
    n_stations: int = 10
    n_days: int = 200
    target_failure_rate: float = 0.003
    failure_rule: FailureRule = field(default_factory=FailureRule)
    geometry_extent: float = 50.0
    K: int = 3
    hours_per_day: int = 24
    start_date: str = "2021-01-01"
    rl_kpis: tuple[str, ...] = DEFAULT_RL_KPIS
    ws_channels: tuple[str, ...] = DEFAULT_WS_CHANNELS
    distractor_ratio: float = 1.0
    coupled_ws_channel: str | None = None
    coupling_strength: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "rl_kpis", tuple(self.rl_kpis))
        object.__setattr__(self, "ws_channels", tuple(self.ws_channels))
        if isinstance(self.failure_rule, dict):
            object.__setattr__(self, "failure_rule", FailureRule(**self.failure_rule))
        if not 0.0 < self.target_failure_rate <= 0.5:
            raise ArgumentError("target_failure_rate must be in (0, 0.5]")
        if self.n_stations < self.K:
            raise ArgumentError(f"n_stations={self.n_stations} < K={self.K}")
        if self.n_links < 1 or self.n_days < 2:
            raise ArgumentError("need at least one link and two days")
        for c in self.failure_rule.trigger_channels:
            if c not in self.rl_kpis:
                raise ArgumentError(f"trigger channel {c!r} is not a generated KPI")
            if c in _ADDITIVE:
                raise ArgumentError(f"trigger channel {c!r} has no multiplicative burst model")
        if self.coupled_ws_channel is not None and self.coupled_ws_channel not in self.ws_channels:
            raise ArgumentError(f"coupled_ws_channel {self.coupled_ws_channel!r} is not a WS channel")

    def schema(self) -> SchemaConfig:
        return SchemaConfig(rl_kpis=self.rl_kpis, ws_channels=self.ws_channels,
                            static_columns=tuple(_STATIC_LEVELS), K=self.K)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_rule"] = asdict(self.failure_rule)
        return d


@dataclass(frozen=True)
class GroundTruthRelevance:
    relevant_channels: frozenset[int]
    relevant_timestep: int = -1
    trigger_names: tuple[str, ...] = ()
    thresholds: dict = field(default_factory=dict)
    realized_rate: float = 0.0
    event_prob: float = 0.0

    def __post_init__(self):
        if not self.relevant_channels:
            raise ArgumentError("relevant_channels must be non-empty")


@dataclass(frozen=True)
class StationGraph:
    link_positions: np.ndarray
    station_positions: np.ndarray
    neighbor_map: np.ndarray

    @property
    def K(self) -> int:
        return self.neighbor_map.shape[1]


def knearest_stations(link_positions: np.ndarray, station_positions: np.ndarray, K: int = 3) -> StationGraph:
    """Euclidean K nearest stations per link, ascending distance, ties to the lower index."""
    links = np.asarray(link_positions, dtype=np.float64).reshape(-1, 2)
    stations = np.asarray(station_positions, dtype=np.float64).reshape(-1, 2)
    if K < 1 or K > len(stations):
        raise ArgumentError(f"K={K} must be in [1, {len(stations)}]")
    dist = np.sqrt(((links[:, None, :] - stations[None, :, :]) ** 2).sum(-1))
    order = np.argsort(dist, axis=1, kind="stable")[:, :K]
    return StationGraph(links, stations, order)


def _station_ids(n: int) -> list[str]:
    return [f"S{i:03d}" for i in range(n)]


def _link_ids(n: int) -> list[str]:
    return [f"L{i:03d}" for i in range(n)]


def _rl_baselines(cfg: SynthConfig):
    """Baseline KPI arrays (L, R, D) plus the per-link random draws reused during calibration."""
    L, D = cfg.n_links, cfg.n_days
    R = len(cfg.rl_kpis)
    trig = [cfg.rl_kpis.index(c) for c in cfg.failure_rule.trigger_channels]
    base = np.zeros((L, R, D))
    u_event = np.zeros((L, D))
    u_distract = np.zeros((L, len(trig), D))
    f_event = np.zeros((L, len(trig), D))
    f_distract = np.zeros((L, len(trig), D))
    noise_bursts = np.ones((L, R, D))
    for l in range(L):
        rng = np.random.default_rng([cfg.seed, 1, l])
        eps = rng.standard_normal((R, D)) * _AR_SIGMA * math.sqrt(1 - _AR_COEF**2)
        z = np.zeros((R, D))
        z[:, 0] = rng.standard_normal(R) * _AR_SIGMA
        for d in range(1, D):
            z[:, d] = _AR_COEF * z[:, d - 1] + eps[:, d]
        for r, name in enumerate(cfg.rl_kpis):
            if name in _ADDITIVE:
                level, scale = _ADDITIVE[name]
                base[l, r] = level + scale * z[r] / _AR_SIGMA
            else:
                base[l, r] = _RL_LEVEL.get(name, 10.0) * np.exp(z[r])
        u_event[l] = rng.random(D)
        u_distract[l] = rng.random((len(trig), D))
        f_event[l] = rng.uniform(*_BURST_RANGE, size=(len(trig), D))
        f_distract[l] = rng.uniform(*_BURST_RANGE, size=(len(trig), D))
        nb = rng.random((R, D)) < _NOISE_BURST_PROB
        factors = rng.uniform(*_BURST_RANGE, size=(R, D))
        for r, name in enumerate(cfg.rl_kpis):
            if r in trig or name in _ADDITIVE:
                continue
            noise_bursts[l, r] = np.where(nb[r], factors[r], 1.0)
    return base, trig, u_event, u_distract, f_event, f_distract, noise_bursts


def _apply_rule(rule: FailureRule, trig_values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Boolean (L, D): does the rule fire on day d."""
    above = trig_values > thresholds[None, :, None]
    return above.all(axis=1) if rule.combination == "AND" else above.any(axis=1)


def generate_tables(cfg: SynthConfig):
    """Raw CSV-shaped tables plus ground truth and geometry.

    Returns ``(tables, truth, graph)`` where ``tables`` maps ``rl_kpi``,
    ``ws``, ``static`` and ``distances`` to data frames.
    """
    rule = cfg.failure_rule
    L, D = cfg.n_links, cfg.n_days
    base, trig, u_event, u_distract, f_event, f_distract, noise_bursts = _rl_baselines(cfg)

    if rule.thresholds is not None:
        thresholds = np.array([float(rule.thresholds[c]) for c in rule.trigger_channels])
    else:
        thresholds = np.array([np.quantile(base[:, r], rule.threshold_quantile) for r in trig])

    def realise(q: float):
        event = u_event < q
        distract = u_distract < cfg.distractor_ratio * q
        factor = np.where(event[:, None, :], f_event, 1.0)
        factor = np.where(distract & ~event[:, None, :], f_distract, factor)
        trig_vals = base[:, trig] * factor
        fires = _apply_rule(rule, trig_vals, thresholds)
        failures = np.zeros((L, D), dtype=np.int8)
        failures[:, 1:] = fires[:, :-1]
        return trig_vals, fires, failures

    target = cfg.target_failure_rate
    lo, hi = math.log(target / 4), math.log(min(0.5, target * 4))
    best = None
    for _ in range(10):
        mid = 0.5 * (lo + hi)
        q = math.exp(mid)
        _, _, failures = realise(q)
        rate = failures.sum() / failures.size
        if best is None or abs(rate - target) < abs(best[1] - target):
            best = (q, rate)
        if abs(rate / target - 1) <= 0.02:
            break
        if rate < target:
            lo = mid
        else:
            hi = mid
    q, rate = best
    if abs(rate / target - 1) > 0.2:
        raise SynthError(f"failure rule cannot reach target rate {target:g}; achieved {rate:g}")
    trig_vals, fires, failures = realise(q)

    if rule.noise_flip_prob > 0:
        flip_neg = rule.noise_flip_prob * rate / max(1 - rate, 1e-12)
        for l in range(L):
            rng = np.random.default_rng([cfg.seed, 2, l])
            u = rng.random(D)
            pos = failures[l] == 1
            flip = np.where(pos, u < rule.noise_flip_prob, u < flip_neg)
            flip[0] = False
            failures[l] = np.where(flip, 1 - failures[l], failures[l])

    rl_vals = base * noise_bursts
    rl_vals[:, trig] = trig_vals

    # geometry
    geo = np.random.default_rng([cfg.seed, 4])
    link_pos = geo.uniform(0, cfg.geometry_extent, size=(L, 2))
    st_pos = geo.uniform(0, cfg.geometry_extent, size=(cfg.n_stations, 2))
    graph = knearest_stations(link_pos, st_pos, cfg.K)

    ws_hourly = _weather(cfg)
    if cfg.coupled_ws_channel is not None:
        w = cfg.ws_channels.index(cfg.coupled_ws_channel)
        scale = ws_hourly[:, w].std() + 1e-9
        for l in range(L):
            nearest = graph.neighbor_map[l, 0]
            ws_hourly[nearest, w, fires[l]] += cfg.coupling_strength * scale

    dates = np.arange(np.datetime64(cfg.start_date, "D"), np.datetime64(cfg.start_date, "D") + D)
    date_str = np.datetime_as_string(dates, unit="D")
    links, stations = _link_ids(L), _station_ids(cfg.n_stations)

    rl = pd.DataFrame({"link_id": np.repeat(links, D), "date": np.tile(date_str, L)})
    for r, name in enumerate(cfg.rl_kpis):
        rl[name] = rl_vals[:, r].reshape(-1)
    rl["rlf"] = failures.reshape(-1)

    H = cfg.hours_per_day
    S = cfg.n_stations
    ws = pd.DataFrame({
        "station_id": np.repeat(stations, D * H),
        "date": np.tile(np.repeat(date_str, H), S),
        "hour": np.tile(np.arange(H), S * D),
    })
    for w, name in enumerate(cfg.ws_channels):
        ws[name] = ws_hourly[:, w].reshape(-1)

    srng = np.random.default_rng([cfg.seed, 3])
    static = pd.DataFrame({"link_id": links})
    for col, levels in _STATIC_LEVELS.items():
        static[col] = np.asarray(levels)[srng.integers(len(levels), size=L)]

    dist = np.sqrt(((link_pos[:, None] - st_pos[None]) ** 2).sum(-1))
    distances = pd.DataFrame({
        "link_id": np.repeat(links, S),
        "station_id": np.tile(stations, L),
        "distance_km": dist.reshape(-1),
    })

    truth = GroundTruthRelevance(
        relevant_channels=frozenset(trig),
        relevant_timestep=-1,
        trigger_names=rule.trigger_channels,
        thresholds={c: float(t) for c, t in zip(rule.trigger_channels, thresholds)},
        realized_rate=float(failures.sum() / failures.size),
        event_prob=float(q),
    )
    tables = {"rl_kpi": rl, "ws": ws, "static": static, "distances": distances}
    return tables, truth, graph


def _weather(cfg: SynthConfig) -> np.ndarray:
    """Hourly WS signals, shape (stations, channels, days, hours)."""
    S, D, H = cfg.n_stations, cfg.n_days, cfg.hours_per_day
    rng = np.random.default_rng([cfg.seed, 5])
    doy = (np.arange(D) + 1)[None, :, None]
    hour = np.arange(H)[None, None, :]
    offset = rng.normal(0, 1.5, size=(S, 1, 1))
    season = np.sin(2 * np.pi * (doy - 100) / 365.0)
    diurnal = np.sin(2 * np.pi * (hour - 9) / 24.0)

    def noise(scale):
        return rng.normal(0, scale, size=(S, D, H))

    temp = 12 + offset + 10 * season + 4 * diurnal + noise(1.5)
    rain = np.where(rng.random((S, D, H)) < 0.05, rng.exponential(1.0, size=(S, D, H)), 0.0)
    humid = np.clip(70 - 15 * season - 8 * diurnal + 10 * (rain > 0) + noise(5), 5, 100)
    wind = np.abs(4 + 2 * season + noise(1.5))
    signals = {
        "temperature": temp,
        "precipitation": rain,
        "humidity": humid,
        "wind_speed": wind,
        "pressure": 1013 + 4 * season + noise(2.0),
        "visibility": np.clip(20 - 2.0 * rain + noise(2.0), 0.1, 50),
        "cloud_cover": np.clip(50 + 30 * season + 20 * (rain > 0) + noise(15), 0, 100),
        "dew_point": temp - (100 - humid) / 5,
        "wind_gust": wind * (1.3 + np.abs(noise(0.2))),
    }
    out = np.zeros((S, len(cfg.ws_channels), D, H))
    for w, name in enumerate(cfg.ws_channels):
        out[:, w] = signals[name] if name in signals else 10 + 3 * season + noise(1.0)
    return out


def generate(cfg: SynthConfig) -> tuple[DailyPanel, GroundTruthRelevance, StationGraph]:
    """Deterministic synthetic panel for ``cfg``; window it with ``make_windows``."""
    tables, truth, graph = generate_tables(cfg)
    panel = build_panel(tables["rl_kpi"], tables["ws"], tables["static"], tables["distances"], cfg.schema())
    return panel, truth, graph


def write_tables(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the four CSV tables and ``ground_truth.json``; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables, truth, _ = generate_tables(cfg)
    paths = {}
    for name, df in tables.items():
        paths[name] = out_dir / f"{name}.csv"
        df.to_csv(paths[name], index=False, float_format="%.17g", lineterminator="\n")
    gt = {
        "trigger_channels": list(truth.trigger_names),
        "relevant_channels": sorted(truth.relevant_channels),
        "relevant_timestep": truth.relevant_timestep,
        "thresholds": truth.thresholds,
        "combination": cfg.failure_rule.combination,
        "realized_rate": truth.realized_rate,
        "event_prob": truth.event_prob,
        "config": cfg.to_dict(),
    }
    paths["ground_truth"] = out_dir / "ground_truth.json"
    paths["ground_truth"].write_text(json.dumps(gt, indent=2, sort_keys=True) + "\n")
    return paths
