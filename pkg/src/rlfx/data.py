"""Telemetry containers, CSV loading, windowing, fold protocol and scaling."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ArgumentError, LoadError

log = logging.getLogger(__name__)

DEFAULT_RL_KPIS = (
    "severely_error_second",
    "error_second",
    "unavail_second",
    "bbe",
    "rxlevmax",
    "capacity",
)
DEFAULT_WS_CHANNELS = (
    "temperature",
    "precipitation",
    "humidity",
    "wind_speed",
    "pressure",
    "visibility",
    "cloud_cover",
    "dew_point",
    "wind_gust",
)
DEFAULT_UNITS = {
    "severely_error_second": "s",
    "error_second": "s",
    "unavail_second": "s",
    "bbe": "count",
    "rxlevmax": "dBm",
    "capacity": "Mbps",
    "temperature": "degC",
    "precipitation": "mm",
    "humidity": "%",
    "wind_speed": "m/s",
    "pressure": "hPa",
    "visibility": "km",
    "cloud_cover": "%",
    "dew_point": "degC",
    "wind_gust": "m/s",
}
POSITIONAL_NAME = "position"


class ChannelKind(str, Enum):
    RL_KPI = "RL_KPI"
    WS = "WS"
    POSITIONAL = "POSITIONAL"
    DERIVED_WS = "DERIVED_WS"
    # pseudo-channel used by attribution for the static feature group
    STATIC = "STATIC"


@dataclass(frozen=True)
class ChannelMeta:
    name: str
    kind: ChannelKind
    unit: str = ""
    prunable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        if self.kind is ChannelKind.POSITIONAL and self.prunable:
            raise ArgumentError(f"positional channel {self.name!r} cannot be prunable")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "unit": self.unit, "prunable": self.prunable}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelMeta":
        return cls(d["name"], ChannelKind(d["kind"]), d.get("unit", ""), bool(d.get("prunable", True)))


def ws_channel_name(feature: str, rank: int) -> str:
    """Name of WS ``feature`` taken from the ``rank``-th nearest station."""
    return f"{feature}@{rank}"


def split_ws_name(name: str) -> tuple[str, int]:
    feature, _, rank = name.rpartition("@")
    return feature, int(rank)


@dataclass(frozen=True)
class SchemaConfig:
    rl_kpis: tuple[str, ...] = DEFAULT_RL_KPIS
    ws_channels: tuple[str, ...] = DEFAULT_WS_CHANNELS
    static_columns: tuple[str, ...] = ()
    label_column: str = "rlf"
    K: int = 3
    sum_channels: tuple[str, ...] = ("precipitation",)
    units: dict = field(default_factory=lambda: dict(DEFAULT_UNITS))

    def __post_init__(self):
        object.__setattr__(self, "rl_kpis", tuple(self.rl_kpis))
        object.__setattr__(self, "ws_channels", tuple(self.ws_channels))
        object.__setattr__(self, "static_columns", tuple(self.static_columns))
        object.__setattr__(self, "sum_channels", tuple(self.sum_channels))
        if not 6 <= len(self.rl_kpis) <= 8:
            raise ArgumentError(f"expected 6-8 radio link KPIs, got {len(self.rl_kpis)}")
        if self.K < 1:
            raise ArgumentError("K must be >= 1")

    def channel_meta(self) -> tuple[ChannelMeta, ...]:
        metas = [ChannelMeta(c, ChannelKind.RL_KPI, self.units.get(c, "")) for c in self.rl_kpis]
        for k in range(self.K):
            for c in self.ws_channels:
                metas.append(ChannelMeta(ws_channel_name(c, k), ChannelKind.WS, self.units.get(c, "")))
        return tuple(metas)


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DailyPanel:
    """Per-link daily series on a shared calendar.

    ``values`` is ``(L, C, D)``: radio link KPIs followed by WS channels of
    the K nearest stations (station-major). ``span[l]`` is the half-open day
    range over which link ``l`` has records.
    """

    link_ids: tuple[str, ...]
    dates: np.ndarray
    values: np.ndarray
    failures: np.ndarray
    channel_meta: tuple[ChannelMeta, ...]
    span: np.ndarray
    static: np.ndarray | None = None
    static_names: tuple[str, ...] = ()
    neighbors: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        for name in ("dates", "values", "failures", "span", "static"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        L, C, D = self.values.shape
        if len(self.channel_meta) != C:
            raise ArgumentError(f"{len(self.channel_meta)} channel metas for {C} channels")
        if self.failures.shape != (L, D) or len(self.link_ids) != L or len(self.dates) != D:
            raise ArgumentError("panel axes disagree")

    @property
    def channel_names(self) -> list[str]:
        return [m.name for m in self.channel_meta]


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Windowed instances ``values[N, C, T]`` with next-day failure labels.

    ``day_index`` holds the calendar position of each instance's label day;
    folds are cut on that axis. ``n_days_total`` is the length of the axis.
    """

    values: np.ndarray
    labels: np.ndarray
    channel_meta: tuple[ChannelMeta, ...]
    link_ids: np.ndarray
    window_end: np.ndarray
    day_index: np.ndarray
    n_days_total: int
    static: np.ndarray | None = None
    static_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ArgumentError(f"values must be N x C x T, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("values contain NaN or Inf")
        labels = np.asarray(self.labels).astype(np.int8)
        if labels.shape != (values.shape[0],):
            raise ArgumentError("labels length differs from instance count")
        if not np.all((labels == 0) | (labels == 1)):
            raise ArgumentError("labels must be binary")
        if len(self.channel_meta) != values.shape[1]:
            raise ArgumentError(f"{len(self.channel_meta)} channel metas for {values.shape[1]} channels")
        object.__setattr__(self, "channel_meta", tuple(self.channel_meta))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "link_ids", _frozen(np.asarray(self.link_ids, dtype=object)))
        object.__setattr__(self, "window_end", _frozen(np.asarray(self.window_end, dtype="datetime64[D]")))
        object.__setattr__(self, "day_index", _frozen(np.asarray(self.day_index, dtype=np.int64)))
        if self.static is not None:
            static = np.asarray(self.static, dtype=np.float64)
            if static.shape[0] != values.shape[0]:
                raise ArgumentError("static rows differ from instance count")
            object.__setattr__(self, "static", _frozen(static))

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> int:
        return self.values.shape[2]

    @property
    def channel_names(self) -> list[str]:
        return [m.name for m in self.channel_meta]

    def channel_index(self, name: str) -> int:
        return self.channel_names.index(name)

    def channels_of_kind(self, *kinds: ChannelKind) -> list[int]:
        return [i for i, m in enumerate(self.channel_meta) if m.kind in kinds]

    def instance_ids(self, idx: Sequence[int] | None = None) -> list[str]:
        idx = range(self.n_instances) if idx is None else idx
        return [f"{self.link_ids[i]}/{self.window_end[i]}" for i in idx]

    def subset(self, idx) -> "TimeSeriesDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            values=self.values[idx],
            labels=self.labels[idx],
            link_ids=self.link_ids[idx],
            window_end=self.window_end[idx],
            day_index=self.day_index[idx],
            static=None if self.static is None else self.static[idx],
        )

    def with_values(self, values: np.ndarray) -> "TimeSeriesDataset":
        return replace(self, values=values)


# ---------------------------------------------------------------------------
# loading


def _read_csv(path: str | Path, what: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{what} file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"link_id": str, "station_id": str}, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise LoadError(f"{what} file is empty: {path}") from None
    if df.empty:
        raise LoadError(f"{what} file has no rows: {path}")
    return df


def _require(df: pd.DataFrame, columns: Sequence[str], what: str, numeric: Sequence[str] = ()) -> None:
    for col in columns:
        if col not in df.columns:
            raise LoadError(f"{what}: missing column {col!r}")
    for col in numeric:
        if pd.api.types.is_numeric_dtype(df[col]):
            continue
        coerced = pd.to_numeric(df[col], errors="coerce")
        bad = coerced.isna() & df[col].notna()
        if bad.any():
            example = df.loc[bad, col].iloc[0]
            raise LoadError(f"{what}: column {col!r} is not numeric (value {example!r})")
        df[col] = coerced


def _parse_dates(df: pd.DataFrame, what: str) -> None:
    try:
        parsed = pd.to_datetime(df["date"], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
        df["_day"] = parsed.astype(np.int64)
    except (ValueError, TypeError) as exc:
        raise LoadError(f"{what}: column 'date' is not ISO-8601 ({exc})") from None


def aggregate_ws_daily(ws: pd.DataFrame, schema: SchemaConfig) -> pd.DataFrame:
    """Hourly WS rows to one row per (station, day): sums for ``sum_channels``, means otherwise."""
    how = {c: ("sum" if c in schema.sum_channels else "mean") for c in schema.ws_channels}
    daily = ws.groupby(["station_id", "_day"], sort=True).agg(how)
    return daily.reset_index()


def nearest_from_distances(dist: pd.DataFrame, K: int) -> dict[str, tuple[str, ...]]:
    """K nearest stations per link from a distance table; ties go to the lower station index."""
    stations = sorted(dist["station_id"].unique())
    order = {s: i for i, s in enumerate(stations)}
    out = {}
    for link, grp in dist.groupby("link_id", sort=True):
        if grp["station_id"].nunique() < K:
            raise LoadError(f"distances: link {link!r} has fewer than K={K} stations")
        grp = grp.assign(_idx=grp["station_id"].map(order)).sort_values(["distance_km", "_idx"], kind="stable")
        out[link] = tuple(grp["station_id"].drop_duplicates().iloc[:K])
    return out


def _ffill_zero(a: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs along the last axis, then replace leading NaNs with zero."""
    a = np.array(a, dtype=np.float64)
    mask = np.isnan(a)
    idx = np.where(~mask, np.arange(a.shape[-1]), 0)
    np.maximum.accumulate(idx, axis=-1, out=idx)
    filled = np.take_along_axis(a, idx, axis=-1)
    return np.nan_to_num(filled, nan=0.0)


def build_panel(
    rl: pd.DataFrame,
    ws: pd.DataFrame,
    static: pd.DataFrame | None,
    distances: pd.DataFrame,
    schema: SchemaConfig,
) -> DailyPanel:
    rl = rl.copy()
    ws = ws.copy()
    _require(rl, ("link_id", "date", *schema.rl_kpis, schema.label_column), "rl_kpi",
             numeric=(*schema.rl_kpis, schema.label_column))
    _require(ws, ("station_id", "date", "hour", *schema.ws_channels), "ws", numeric=schema.ws_channels)
    _require(distances, ("link_id", "station_id", "distance_km"), "distances", numeric=("distance_km",))
    _parse_dates(rl, "rl_kpi")
    _parse_dates(ws, "ws")
    rl["link_id"] = rl["link_id"].astype(str)
    ws["station_id"] = ws["station_id"].astype(str)
    distances = distances.assign(link_id=distances["link_id"].astype(str),
                                 station_id=distances["station_id"].astype(str))

    labels = rl[schema.label_column]
    if not labels.dropna().isin([0, 1]).all():
        raise LoadError(f"rl_kpi: column {schema.label_column!r} must hold 0/1 values")

    rl = rl.drop_duplicates(["link_id", "_day"], keep="last")
    links = tuple(sorted(rl["link_id"].unique()))
    start, stop = int(rl["_day"].min()), int(rl["_day"].max())
    dates = np.arange(start, stop + 1).astype("datetime64[D]")
    D = len(dates)
    link_pos = {l: i for i, l in enumerate(links)}
    li = rl["link_id"].map(link_pos).to_numpy()
    di = rl["_day"].to_numpy() - start

    L, R = len(links), len(schema.rl_kpis)
    rl_vals = np.full((L, R, D), np.nan)
    rl_vals[li, :, di] = rl[list(schema.rl_kpis)].to_numpy(dtype=np.float64)
    failures = np.zeros((L, D), dtype=np.int8)
    failures[li, di] = rl[schema.label_column].fillna(0).to_numpy().astype(np.int8)
    span = np.zeros((L, 2), dtype=np.int64)
    for l in range(L):
        present = np.flatnonzero(li == l)
        span[l] = di[present].min(), di[present].max() + 1

    daily = aggregate_ws_daily(ws, schema)
    stations = sorted(daily["station_id"].unique())
    st_pos = {s: i for i, s in enumerate(stations)}
    F = len(schema.ws_channels)
    st_vals = np.full((len(stations), F, D), np.nan)
    daily = daily[(daily["_day"] >= start) & (daily["_day"] <= stop)]
    sdi = daily["_day"].to_numpy() - start
    st_vals[daily["station_id"].map(st_pos).to_numpy(), :, sdi] = daily[list(schema.ws_channels)].to_numpy(
        dtype=np.float64)

    neighbor_map = nearest_from_distances(distances, schema.K)
    ws_vals = np.zeros((L, schema.K * F, D))
    neighbors = []
    for l, link in enumerate(links):
        if link not in neighbor_map:
            raise LoadError(f"distances: no rows for link {link!r}")
        nb = neighbor_map[link]
        for k, st in enumerate(nb):
            if st not in st_pos:
                raise LoadError(f"ws: no observations for station {st!r}")
            ws_vals[l, k * F:(k + 1) * F] = st_vals[st_pos[st]]
        neighbors.append(nb)

    values = _ffill_zero(np.concatenate([rl_vals, ws_vals], axis=1))

    static_arr, static_names = None, ()
    if static is not None and schema.static_columns:
        static = static.copy()
        _require(static, ("link_id", *schema.static_columns), "static")
        static["link_id"] = static["link_id"].astype(str)
        static = static.drop_duplicates("link_id", keep="last").set_index("link_id")
        cols = []
        names = []
        for col in schema.static_columns:
            cats = sorted(static[col].dropna().astype(str).unique())
            vals = static[col].astype(str).reindex(list(links))
            for cat in cats:
                names.append(f"{col}={cat}")
                cols.append((vals == cat).to_numpy(dtype=np.float64))
        static_arr = np.stack(cols, axis=1) if cols else np.zeros((L, 0))
        static_names = tuple(names)

    return DailyPanel(
        link_ids=links,
        dates=dates,
        values=values,
        failures=failures,
        channel_meta=schema.channel_meta(),
        span=span,
        static=static_arr,
        static_names=static_names,
        neighbors=tuple(neighbors),
    )


def load_dataset(
    rl_kpi_path: str | Path,
    ws_path: str | Path,
    static_path: str | Path | None,
    distances_path: str | Path,
    schema: SchemaConfig | None = None,
) -> DailyPanel:
    """Read the four CSV tables and assemble the per-link daily panel.

    Missing observations are forward-filled along the calendar and then
    zero-filled. Window the result with :func:`make_windows`.
    """
    schema = schema or SchemaConfig()
    rl = _read_csv(rl_kpi_path, "rl_kpi")
    ws = _read_csv(ws_path, "ws")
    dist = _read_csv(distances_path, "distances")
    static = _read_csv(static_path, "static") if static_path is not None and schema.static_columns else None
    return build_panel(rl, ws, static, dist, schema)


# ---------------------------------------------------------------------------
# windowing


def make_windows(panel: DailyPanel, n_days: int = 4) -> TimeSeriesDataset:
    """Slide an ``n_days`` history over each link; label = failure on the following day.

    A positional channel ``t / (n_days - 1)`` is appended after the panel
    channels. Links with fewer than ``n_days + 1`` days are skipped.
    """
    if n_days < 1:
        raise ArgumentError(f"n_days must be >= 1, got {n_days}")
    pos = np.arange(n_days) / max(n_days - 1, 1)
    vals, labels, links, ends, days, statics = [], [], [], [], [], []
    skipped = 0
    for l, link in enumerate(panel.link_ids):
        lo, hi = panel.span[l]
        if hi - lo < n_days + 1:
            skipped += 1
            continue
        series = panel.values[l, :, lo:hi]
        # windows end at lo+n-1 .. hi-2 so that the label day hi-1 is inside the span
        win = np.lib.stride_tricks.sliding_window_view(series, n_days, axis=1)[:, : hi - lo - n_days]
        win = np.transpose(win, (1, 0, 2))
        n = win.shape[0]
        end = np.arange(lo + n_days - 1, hi - 1)
        vals.append(np.concatenate([win, np.broadcast_to(pos, (n, 1, n_days))], axis=1))
        labels.append(panel.failures[l, end + 1])
        links.extend([link] * n)
        ends.append(panel.dates[end])
        days.append(end + 1)
        if panel.static is not None:
            statics.append(np.repeat(panel.static[l][None], n, axis=0))
    if skipped:
        warnings.warn(f"make_windows: skipped {skipped} link(s) shorter than {n_days + 1} days", stacklevel=2)
    meta = panel.channel_meta + (ChannelMeta(POSITIONAL_NAME, ChannelKind.POSITIONAL, "", prunable=False),)
    C = len(meta)
    if not vals:
        return TimeSeriesDataset(np.zeros((0, C, n_days)), np.zeros(0), meta, np.array([], dtype=object),
                                 np.array([], dtype="datetime64[D]"), np.zeros(0, dtype=np.int64),
                                 len(panel.dates), None if panel.static is None else np.zeros((0, panel.static.shape[1])),
                                 panel.static_names)
    return TimeSeriesDataset(
        values=np.concatenate(vals),
        labels=np.concatenate(labels),
        channel_meta=meta,
        link_ids=np.array(links, dtype=object),
        window_end=np.concatenate(ends),
        day_index=np.concatenate(days),
        n_days_total=len(panel.dates),
        static=np.concatenate(statics) if statics else None,
        static_names=panel.static_names,
    )


_STATS = {
    "mean": lambda a: a.mean(axis=1),
    "min": lambda a: a.min(axis=1),
    "max": lambda a: a.max(axis=1),
    "std": lambda a: a.std(axis=1),
}


def derive_ws_channels(dataset: TimeSeriesDataset, stats: Sequence[str] = ("mean", "min", "max", "std")) -> TimeSeriesDataset:
    """Replace per-station WS channels with statistics across the K neighbours.

    This is the input layout of the stacked-LSTM baseline, which consumes
    summary weather features instead of per-station signals.
    """
    ws_idx = dataset.channels_of_kind(ChannelKind.WS)
    if not ws_idx:
        return dataset
    groups: dict[str, list[int]] = {}
    for i in ws_idx:
        feat, _ = split_ws_name(dataset.channel_meta[i].name)
        groups.setdefault(feat, []).append(i)
    rl_idx = dataset.channels_of_kind(ChannelKind.RL_KPI)
    rest = [i for i in range(dataset.n_channels) if i not in ws_idx and i not in rl_idx]
    parts = [dataset.values[:, rl_idx]]
    meta = [dataset.channel_meta[i] for i in rl_idx]
    for stat in stats:
        if stat not in _STATS:
            raise ArgumentError(f"unknown WS statistic {stat!r}")
    for feat, idx in groups.items():
        block = dataset.values[:, idx]
        unit = dataset.channel_meta[idx[0]].unit
        for stat in stats:
            parts.append(_STATS[stat](block)[:, None])
            meta.append(ChannelMeta(f"{feat}_{stat}", ChannelKind.DERIVED_WS, unit))
    parts.append(dataset.values[:, rest])
    meta.extend(dataset.channel_meta[i] for i in rest)
    return replace(dataset, values=np.concatenate(parts, axis=1), channel_meta=tuple(meta))


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldSpec:
    fold_id: str
    train: range
    val: range
    test: range

    @property
    def extent(self) -> int:
        return self.test.stop

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "train": [self.train.start, self.train.stop],
            "val": [self.val.start, self.val.stop],
            "test": [self.test.start, self.test.stop],
        }


def rolling_origin_folds(total_extent: int, num_folds: int = 5) -> list[FoldSpec]:
    """Rolling-origin folds, returned as ``[F0, ..., F{num_folds-1}]``.

    The last fold spans the whole axis; each earlier fold keeps the first 90%
    (floor) of the next one. Every fold is split 70/20/10 with train and val
    floored and the remainder given to test.
    """
    if num_folds < 1:
        raise ArgumentError("num_folds must be >= 1")
    if total_extent < num_folds * 10:
        raise ArgumentError(f"total_extent={total_extent} too small for {num_folds} folds (need >= {num_folds * 10})")
    extents = [int(total_extent)]
    for _ in range(num_folds - 1):
        extents.append(extents[-1] * 9 // 10)
    folds = []
    for i, extent in enumerate(reversed(extents)):
        n_train = extent * 7 // 10
        n_val = extent * 2 // 10
        folds.append(FoldSpec(f"F{i}", range(0, n_train), range(n_train, n_train + n_val),
                              range(n_train + n_val, extent)))
    return folds


def get_fold(total_extent: int, fold_id: str, num_folds: int = 5) -> FoldSpec:
    for fold in rolling_origin_folds(total_extent, num_folds):
        if fold.fold_id == fold_id:
            return fold
    raise ArgumentError(f"unknown fold {fold_id!r}")


def split_indices(dataset: TimeSeriesDataset, fold: FoldSpec) -> dict[str, np.ndarray]:
    """Instance indices per split, assigned by label day."""
    d = dataset.day_index
    out = {}
    for name in ("train", "val", "test"):
        r = getattr(fold, name)
        out[name] = np.flatnonzero((d >= r.start) & (d < r.stop))
    return out


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score parameters.

    Channels flagged in ``log_mask`` are first mapped through the signed log
    ``sign(x) * log1p(|x|)``; ``mean``/``std`` then refer to that scale.
    """

    mean: np.ndarray
    std: np.ndarray
    log_mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _frozen(np.asarray(self.std, dtype=np.float64)))
        mask = np.zeros(len(self.mean), dtype=bool) if self.log_mask is None else np.asarray(self.log_mask, dtype=bool)
        if mask.shape != self.mean.shape:
            raise ArgumentError("log_mask length differs from channel count")
        object.__setattr__(self, "log_mask", _frozen(mask))

    def _forward_scale(self, values: np.ndarray) -> np.ndarray:
        if not self.log_mask.any():
            return values
        out = np.array(values, dtype=np.float64, copy=True)
        sel = out[..., self.log_mask, :]
        out[..., self.log_mask, :] = np.sign(sel) * np.log1p(np.abs(sel))
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = self._forward_scale(values)
        scale = np.where(self.std > 0, self.std, 1.0)
        out = (values - self.mean[:, None]) / scale[:, None]
        return np.where((self.std > 0)[:, None], out, 0.0)

    def invert(self, values: np.ndarray) -> np.ndarray:
        out = values * self.std[:, None] + self.mean[:, None]
        if self.log_mask.any():
            sel = out[..., self.log_mask, :]
            out[..., self.log_mask, :] = np.sign(sel) * np.expm1(np.abs(sel))
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "log_mask": self.log_mask.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64), d.get("log_mask"))


def count_channel_mask(dataset: TimeSeriesDataset, rows: np.ndarray | None = None) -> np.ndarray:
    """Radio-link KPI channels that are non-negative on ``rows`` (count-like, heavy tailed)."""
    vals = dataset.values if rows is None else dataset.values[rows]
    mask = np.zeros(dataset.n_channels, dtype=bool)
    for c in dataset.channels_of_kind(ChannelKind.RL_KPI):
        mask[c] = vals.shape[0] > 0 and bool(np.all(vals[:, c] >= 0))
    return mask


def fit_norm_stats(values: np.ndarray, log_mask: np.ndarray | None = None) -> NormStats:
    """Per-channel mean/std over instances and time of an ``(N, C, T)`` block."""
    if values.shape[0] == 0:
        raise ArgumentError("cannot fit normalisation on an empty training range")
    probe = NormStats(np.zeros(values.shape[1]), np.ones(values.shape[1]), log_mask)
    scaled = probe._forward_scale(values)
    return NormStats(scaled.mean(axis=(0, 2)), scaled.std(axis=(0, 2)), probe.log_mask)


def normalize(dataset: TimeSeriesDataset, fold: FoldSpec, log_counts: bool = False) -> tuple[TimeSeriesDataset, NormStats]:
    """Z-score every channel with statistics from the fold's training range only.

    With ``log_counts`` the non-negative radio-link KPIs are signed-log
    scaled before standardisation.
    """
    train = split_indices(dataset, fold)["train"]
    mask = count_channel_mask(dataset, train) if log_counts else None
    stats = fit_norm_stats(dataset.values[train], mask)
    return dataset.with_values(stats.apply(dataset.values)), stats


def denormalize(dataset: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    return dataset.with_values(stats.invert(dataset.values))
