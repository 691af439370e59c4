"""Channel importance from saliency maps, coverage pruning and refined specs."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ChannelKind, ChannelMeta
from .errors import ArgumentError, PruningError, ShapeError
from .explain.shapley import SaliencyMap
from .nn.models import ModelSpec, Variant

STATIC_CHANNEL = ChannelMeta("static", ChannelKind.STATIC, "", prunable=True)


def select_tp(probabilities, labels, threshold: float = 0.5) -> list[int]:
    """Indices predicted positive (``p >= threshold``) whose label is 1."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ArgumentError(f"probabilities {p.shape} and labels {y.shape} differ in length")
    return np.flatnonzero((p >= threshold) & (y == 1)).tolist()


def _check_alpha(alpha) -> int:
    if alpha not in (0, 1):
        raise ArgumentError(f"alpha must be 0 or 1, got {alpha!r}")
    return int(alpha)


def local_aggregate(smap: SaliencyMap | np.ndarray, alpha: int = 0) -> np.ndarray:
    """Per-channel sum over time of ``phi`` (``alpha=0``) or ``|phi|`` (``alpha=1``).

    When the map carries static-feature attributions, their aggregate is
    appended as one extra entry.
    """
    alpha = _check_alpha(alpha)
    phi = smap.phi if isinstance(smap, SaliencyMap) else np.asarray(smap, dtype=np.float64)
    agg = np.abs(phi) if alpha else phi
    psi = agg.sum(axis=1)
    static = getattr(smap, "phi_static", None)
    if static is not None:
        s = np.abs(static) if alpha else static
        psi = np.append(psi, s.sum())
    return psi


@dataclass(frozen=True)
class ChannelImportance:
    """Local rows ``psi[n, c]`` and their mean ``psi[c]``.

    ``channel_meta`` names the importance columns: the dataset channels,
    followed by a ``static`` pseudo-channel when static attributions exist.
    """

    local: np.ndarray
    global_: np.ndarray
    alpha: int
    channel_meta: tuple[ChannelMeta, ...]
    instance_ids: tuple[str, ...] = ()

    @property
    def n_instances(self) -> int:
        return self.local.shape[0]

    @property
    def channel_names(self) -> list[str]:
        return [m.name for m in self.channel_meta]

    def ranking(self) -> list[int]:
        """Channels by decreasing ``|psi|``; ties keep the lower index first."""
        return np.argsort(-np.abs(self.global_), kind="stable").tolist()

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_instances": self.n_instances,
            "channels": [m.to_dict() for m in self.channel_meta],
            "global": self.global_.tolist(),
            "local": self.local.tolist(),
            "instance_ids": list(self.instance_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelImportance":
        meta = tuple(ChannelMeta.from_dict(m) for m in d["channels"])
        return cls(np.array(d["local"], dtype=np.float64).reshape(-1, len(meta)),
                   np.array(d["global"], dtype=np.float64), int(d["alpha"]), meta, tuple(d["instance_ids"]))


def global_aggregate(
    maps: Sequence[SaliencyMap],
    alpha: int = 0,
    channel_meta: Sequence[ChannelMeta] | None = None,
) -> ChannelImportance:
    """Average the local aggregates of ``maps``."""
    alpha = _check_alpha(alpha)
    if not maps:
        raise ArgumentError("global aggregation needs at least one saliency map")
    shape = maps[0].phi.shape
    has_static = maps[0].phi_static is not None
    for m in maps:
        if m.phi.shape != shape or (m.phi_static is not None) != has_static:
            raise ShapeError(f"saliency map {m.instance_id!r} has shape {m.phi.shape}, expected {shape}")
    local = np.stack([local_aggregate(m, alpha) for m in maps])
    if channel_meta is None:
        channel_meta = [ChannelMeta(f"ch{c}", ChannelKind.RL_KPI) for c in range(shape[0])]
    channel_meta = tuple(channel_meta)
    if len(channel_meta) != shape[0]:
        raise ShapeError(f"{len(channel_meta)} channel metas for {shape[0]} saliency rows")
    if has_static:
        channel_meta = channel_meta + (STATIC_CHANNEL,)
    return ChannelImportance(local, local.mean(axis=0), alpha, channel_meta, tuple(m.instance_id for m in maps))


@dataclass(frozen=True)
class PrunedFeatureSet:
    kept_channels: tuple[int, ...]
    tau: float
    coverage: float
    exempt_channels: tuple[int, ...]
    coverage_requested: float = 0.95
    channel_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kept_channels": list(self.kept_channels),
            "tau": self.tau,
            "coverage": self.coverage,
            "exempt_channels": list(self.exempt_channels),
            "coverage_requested": self.coverage_requested,
            "channel_names": list(self.channel_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrunedFeatureSet":
        return cls(tuple(d["kept_channels"]), d["tau"], d["coverage"], tuple(d["exempt_channels"]),
                   d["coverage_requested"], tuple(d["channel_names"]))


def prune(
    importance: ChannelImportance,
    coverage: float = 0.95,
    channel_meta: Sequence[ChannelMeta] | None = None,
) -> PrunedFeatureSet:
    """Keep the shortest ``|psi|``-ranked prefix reaching ``coverage`` of the total.

    Non-prunable channels are kept regardless and take no part in the
    ranking. ``tau`` is the ``|psi|`` of the last prunable channel kept.
    """
    if not 0.0 < coverage <= 1.0:
        raise ArgumentError(f"coverage must be in (0, 1], got {coverage}")
    meta = tuple(channel_meta) if channel_meta is not None else importance.channel_meta
    mag = np.abs(np.asarray(importance.global_, dtype=np.float64))
    if len(meta) != len(mag):
        raise ShapeError(f"{len(meta)} channel metas for {len(mag)} importance entries")
    total_all = mag.sum()
    if not total_all > 0:
        raise PruningError("total importance is zero; nothing to rank")
    exempt = [c for c, m in enumerate(meta) if not m.prunable]
    prunable = np.array([c for c, m in enumerate(meta) if m.prunable], dtype=np.int64)
    kept: list[int] = []
    tau = 0.0
    if len(prunable):
        order = prunable[np.argsort(-mag[prunable], kind="stable")]
        cum = np.cumsum(mag[order])
        total = cum[-1]
        if total > 0:
            # shortest prefix whose share reaches the target; the share of the
            # full prefix is exactly 1 so the search always succeeds
            share = cum / total
            n_keep = int(np.searchsorted(share >= coverage, True)) + 1 if coverage < 1.0 else int(np.count_nonzero(mag[order] > 0))
            n_keep = max(n_keep, 1)
            kept = order[:n_keep].tolist()
            tau = float(mag[kept[-1]])
    kept_set = sorted(set(kept) | set(exempt))
    achieved = float(mag[kept_set].sum() / total_all)
    return PrunedFeatureSet(
        kept_channels=tuple(int(c) for c in kept_set),
        tau=tau,
        coverage=achieved,
        exempt_channels=tuple(exempt),
        coverage_requested=float(coverage),
        channel_names=tuple(m.name for m in meta),
    )


def derive_pruned_spec(original: ModelSpec, pruned: PrunedFeatureSet, static_index: int | None = None) -> ModelSpec:
    """Refined architecture for the channels that survived pruning.

    ``pruned.kept_channels`` index the dataset channels (the importance
    columns); ``static_index`` is the column of the static pseudo-channel,
    if any. GENTRAP without surviving WS channels becomes LTRANS over the
    kept link channels; LSTM_PLUS losing any input (a channel or the static
    group) becomes the two-layer LLSTM_PLUS. Otherwise the input channels are
    filtered and a pruned static group drops the static branch.
    """
    kept = set(pruned.kept_channels)
    static_kept = static_index is not None and static_index in kept
    kept.discard(static_index)
    if not kept:
        raise ArgumentError("pruned set keeps no input channel")
    extra = kept - set(original.input_channels)
    if extra:
        raise ArgumentError(f"kept channels {sorted(extra)} are not inputs of the original model")
    provenance = original.variant.value
    use_static = original.use_static_branch and (static_kept or static_index is None)
    pos_keep = [p for p, c in enumerate(original.input_channels) if c in kept]
    n_in = len(original.input_channels)
    heavy_prune = (n_in - len(pos_keep)) * 2 >= n_in

    if original.variant is Variant.GENTRAP:
        ws = original.ws_positions
        F = len(ws) // original.K
        grid = np.array(ws).reshape(original.K, F)
        feats = [f for f in range(F) if any(p in pos_keep for p in grid[:, f])]
        base = [p for p in pos_keep if original.channel_kinds[p] is not ChannelKind.WS]
        if not feats:
            if not base:
                raise ArgumentError("no link channels left for the transformer")
            return ModelSpec(
                Variant.LTRANS,
                tuple(original.input_channels[p] for p in base),
                tuple(original.channel_kinds[p] for p in base),
                T=original.T, d_model=original.d_model, n_heads=original.n_heads,
                n_encoder_blocks=max(1, original.n_encoder_blocks // 2) if heavy_prune else original.n_encoder_blocks,
                d_ff=original.d_ff, activation=original.activation, derived_from=provenance,
            )
        keep_pos = sorted(base + [int(grid[k, f]) for k in range(original.K) for f in feats])
    else:
        keep_pos = pos_keep

    channels = tuple(original.input_channels[p] for p in keep_pos)
    kinds = tuple(original.channel_kinds[p] for p in keep_pos)
    lost_any = len(keep_pos) < n_in or (original.use_static_branch and not use_static)
    if original.variant is Variant.LSTM_PLUS and lost_any:
        return ModelSpec(Variant.LLSTM_PLUS, channels, kinds, T=original.T,
                         lstm_layer_sizes=original.lstm_layer_sizes[-2:], derived_from=provenance)
    return replace(original, input_channels=channels, channel_kinds=kinds, use_static_branch=use_static,
                   n_static=original.n_static if use_static else 0, derived_from=provenance)


# ---------------------------------------------------------------------------
# reports


def importance_records(importance: ChannelImportance, pruned: PrunedFeatureSet | None = None) -> list[dict]:
    mag = np.abs(importance.global_)
    total = mag.sum()
    kept = set(pruned.kept_channels) if pruned else set()
    exempt = set(pruned.exempt_channels) if pruned else {c for c, m in enumerate(importance.channel_meta) if not m.prunable}
    return [
        {
            "name": m.name,
            "kind": m.kind.value,
            "psi": float(importance.global_[c]),
            "abs_share": float(mag[c] / total) if total > 0 else 0.0,
            "kept": c in kept,
            "exempt": c in exempt,
        }
        for c, m in enumerate(importance.channel_meta)
    ]


def write_importance_json(importance: ChannelImportance, path: str | Path,
                          pruned: PrunedFeatureSet | None = None) -> None:
    doc = {"alpha": importance.alpha, "n_instances": importance.n_instances,
           "channels": importance_records(importance, pruned)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def write_pruning_report(pruned: PrunedFeatureSet, derived: ModelSpec | None, path: str | Path) -> None:
    doc = {
        "coverage_requested": pruned.coverage_requested,
        "coverage_achieved": pruned.coverage,
        "tau": pruned.tau,
        "kept_channels": [pruned.channel_names[c] if pruned.channel_names else c for c in pruned.kept_channels],
        "kept_indices": list(pruned.kept_channels),
        "exempt_channels": list(pruned.exempt_channels),
        "derived_spec": None if derived is None else derived.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
