"""Failure-prediction architectures and their closed-form parameter counts.

All networks map an input ``X`` of shape ``(N, C_in, T)`` (channels already
restricted to ``spec.input_channels``) plus optional static features
``(N, S)`` to two logits per instance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from ..data import ChannelKind, ChannelMeta
from ..errors import ArgumentError, ShapeError
from .layers import (
    LSTM,
    Dense,
    EncoderBlock,
    Layer,
    MaxOver,
    MeanOver,
    ReLU,
    make_activation,
    softmax,
)


class Variant(str, Enum):
    GENTRAP = "GENTRAP"
    LTRANS = "LTRANS"
    LSTM_PLUS = "LSTM_PLUS"
    LLSTM_PLUS = "LLSTM_PLUS"


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    input_channels: tuple[int, ...]
    channel_kinds: tuple[ChannelKind, ...]
    T: int = 4
    d_model: int = 16
    n_heads: int = 2
    n_encoder_blocks: int = 1
    d_ff: int = 32
    lstm_layer_sizes: tuple[int, ...] = (128, 64, 32, 16)
    K: int = 3
    use_static_branch: bool = False
    n_static: int = 0
    d_gnn: int = 16
    d_static: int = 16
    d_fuse: int = 32
    activation: str = "relu"
    derived_from: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "input_channels", tuple(int(i) for i in self.input_channels))
        object.__setattr__(self, "channel_kinds", tuple(ChannelKind(k) for k in self.channel_kinds))
        object.__setattr__(self, "lstm_layer_sizes", tuple(int(h) for h in self.lstm_layer_sizes))
        if len(self.channel_kinds) != len(self.input_channels):
            raise ArgumentError("channel_kinds must parallel input_channels")
        if not self.input_channels:
            raise ArgumentError("a model needs at least one input channel")
        if self.d_model % self.n_heads:
            raise ArgumentError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.variant is Variant.LLSTM_PLUS and len(self.lstm_layer_sizes) != 2:
            raise ArgumentError("LLSTM_PLUS has exactly two LSTM layers")
        if self.variant in (Variant.LTRANS, Variant.LLSTM_PLUS) and self.use_static_branch:
            raise ArgumentError(f"{self.variant.value} has no static branch")
        if self.use_static_branch and self.n_static < 1:
            raise ArgumentError("use_static_branch requires n_static >= 1")
        if self.variant is Variant.GENTRAP:
            n_ws = len(self.ws_positions)
            if n_ws == 0 or n_ws % self.K:
                raise ArgumentError(f"GENTRAP needs WS channels in K={self.K} station blocks, got {n_ws}")

    @property
    def ws_positions(self) -> list[int]:
        return [i for i, k in enumerate(self.channel_kinds) if k is ChannelKind.WS]

    @property
    def base_positions(self) -> list[int]:
        return [i for i, k in enumerate(self.channel_kinds) if k is not ChannelKind.WS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["input_channels"] = list(self.input_channels)
        d["channel_kinds"] = [k.value for k in self.channel_kinds]
        d["lstm_layer_sizes"] = list(self.lstm_layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# closed-form parameter counts


def dense_params(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def lstm_params(n_in: int, hidden: int) -> int:
    return 4 * (n_in * hidden + hidden * hidden + hidden)


def encoder_block_params(d_model: int, d_ff: int) -> int:
    attention = 4 * d_model * d_model + 4 * d_model
    feed_forward = dense_params(d_model, d_ff) + dense_params(d_ff, d_model)
    layer_norms = 2 * 2 * d_model
    return attention + feed_forward + layer_norms


def param_count(spec: ModelSpec) -> int:
    """Trainable parameters of ``spec`` without building it."""
    c_in = len(spec.input_channels)
    static = dense_params(spec.n_static, spec.d_static) if spec.use_static_branch else 0
    d_static = spec.d_static if spec.use_static_branch else 0
    if spec.variant in (Variant.LTRANS, Variant.GENTRAP):
        blocks = spec.n_encoder_blocks * encoder_block_params(spec.d_model, spec.d_ff)
        if spec.variant is Variant.LTRANS:
            return dense_params(c_in, spec.d_model) + blocks + dense_params(spec.d_model, 2)
        n_ws = len(spec.ws_positions) // spec.K
        n_base = len(spec.base_positions)
        return (dense_params(n_ws, spec.d_gnn) + dense_params(n_base + spec.d_gnn, spec.d_model) + blocks
                + static + dense_params(spec.d_model + d_static, spec.d_fuse) + dense_params(spec.d_fuse, 2))
    total, n_in = 0, c_in
    for h in spec.lstm_layer_sizes:
        total += lstm_params(n_in, h)
        n_in = h
    return total + static + dense_params(n_in + d_static, 2)


# ---------------------------------------------------------------------------
# graph aggregation


def gnn_max_aggregate(
    ws_signals: np.ndarray,
    neighbor_map: np.ndarray,
    W: np.ndarray,
    activation: Callable[[np.ndarray], np.ndarray] = np.tanh,
) -> np.ndarray:
    """Per-link max over the K neighbours of ``activation(W @ X_u)``.

    ``ws_signals`` is ``(stations, F, T)``, ``neighbor_map`` ``(links, K)``
    and ``W`` ``(d, F)``. Returns ``(links, d, T)``.
    """
    ws_signals = np.asarray(ws_signals, dtype=np.float64)
    neighbor_map = np.asarray(neighbor_map)
    W = np.asarray(W, dtype=np.float64)
    if ws_signals.ndim != 3:
        raise ShapeError(f"ws_signals must be stations x channels x T, got {ws_signals.shape}")
    if W.ndim != 2 or W.shape[1] != ws_signals.shape[1]:
        raise ShapeError(f"W has shape {W.shape}, needs (*, {ws_signals.shape[1]})")
    if neighbor_map.ndim != 2 or neighbor_map.size and (neighbor_map.max() >= ws_signals.shape[0] or neighbor_map.min() < 0):
        raise ShapeError(f"neighbor_map {neighbor_map.shape} inconsistent with {ws_signals.shape[0]} stations")
    h = activation(np.einsum("df,sft->sdt", W, ws_signals))
    return h[neighbor_map].max(axis=1)


# ---------------------------------------------------------------------------
# networks


class Network:
    """Named layers, flat parameter access and a two-logit head."""

    def __init__(self):
        self.layers: dict[str, Layer] = {}

    def _walk(self, prefix: str, layer: Layer):
        yield prefix, layer
        for name, sub in layer.sublayers().items():
            yield from self._walk(f"{prefix}.{name}", sub)

    def all_layers(self):
        for name, layer in self.layers.items():
            yield from self._walk(name, layer)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{p}.{k}": v for p, layer in self.all_layers() for k, v in layer.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{p}.{k}": layer.grads[k] for p, layer in self.all_layers() for k in layer.params}

    def load(self, weights: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(weights):
            missing = sorted(set(own) ^ set(weights))
            raise ShapeError(f"weight names disagree: {missing[:5]}")
        for p, layer in self.all_layers():
            for k in layer.params:
                w = np.asarray(weights[f"{p}.{k}"], dtype=np.float64)
                if w.shape != layer.params[k].shape:
                    raise ShapeError(f"{p}.{k}: shape {w.shape} != {layer.params[k].shape}")
                layer.params[k] = w.copy()

    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())

    def kink_state(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers.values():
            out.extend(layer.kinks())
        return out

    def forward(self, X: np.ndarray, static: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dlogits: np.ndarray) -> None:
        raise NotImplementedError

    def proba(self, X, static=None) -> np.ndarray:
        return softmax(self.forward(X, static), axis=1)[:, 1]


class TransformerNet(Network):
    """Channel projection, encoder stack, average pooling over time, linear head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        c_in = len(spec.input_channels)
        self.layers["embed"] = Dense(c_in, spec.d_model, rng)
        for i in range(spec.n_encoder_blocks):
            self.layers[f"block{i}"] = EncoderBlock(spec.d_model, spec.n_heads, spec.d_ff, rng, spec.activation)
        self.layers["pool"] = MeanOver(axis=1)
        self.layers["head"] = Dense(spec.d_model, 2, rng)
        self.n_blocks = spec.n_encoder_blocks

    def forward(self, X, static=None):
        h = self.layers["embed"].forward(np.transpose(X, (0, 2, 1)))
        for i in range(self.n_blocks):
            h = self.layers[f"block{i}"].forward(h)
        return self.layers["head"].forward(self.layers["pool"].forward(h))

    def backward(self, dlogits):
        d = self.layers["pool"].backward(self.layers["head"].backward(dlogits))
        for i in reversed(range(self.n_blocks)):
            d = self.layers[f"block{i}"].backward(d)
        self.layers["embed"].backward(d)


class GenTrapNet(Network):
    """GNN-transformer with a static branch.

    Each of the K nearest stations' WS signals is transformed per time step
    (``act(W X_u)``), paired with the link's own channels, run through a
    shared encoder and average-pooled over time. The K pair embeddings are
    max-aggregated, fused with the static branch and classified.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.K = spec.K
        self.ws_pos = spec.ws_positions
        self.base_pos = spec.base_positions
        self.n_ws = len(self.ws_pos) // spec.K
        self.layers["gnn"] = Dense(self.n_ws, spec.d_gnn, rng)
        self.layers["gnn_act"] = make_activation("tanh")
        self.layers["embed"] = Dense(len(self.base_pos) + spec.d_gnn, spec.d_model, rng)
        for i in range(spec.n_encoder_blocks):
            self.layers[f"block{i}"] = EncoderBlock(spec.d_model, spec.n_heads, spec.d_ff, rng, spec.activation)
        self.layers["pool"] = MeanOver(axis=1)
        self.layers["kmax"] = MaxOver(axis=1)
        d_fuse_in = spec.d_model
        if spec.use_static_branch:
            self.layers["static"] = Dense(spec.n_static, spec.d_static, rng)
            self.layers["static_act"] = ReLU()
            d_fuse_in += spec.d_static
        self.layers["fuse"] = Dense(d_fuse_in, spec.d_fuse, rng)
        self.layers["fuse_act"] = ReLU()
        self.layers["head"] = Dense(spec.d_fuse, 2, rng)
        self.n_blocks = spec.n_encoder_blocks

    def forward(self, X, static=None):
        N, _, T = X.shape
        K = self.K
        ws = X[:, self.ws_pos].reshape(N, K, self.n_ws, T).transpose(0, 1, 3, 2)
        z = self.layers["gnn_act"].forward(self.layers["gnn"].forward(ws))
        base = np.broadcast_to(X[:, self.base_pos].transpose(0, 2, 1)[:, None], (N, K, T, len(self.base_pos)))
        pair = np.concatenate([base, z], axis=-1).reshape(N * K, T, -1)
        h = self.layers["embed"].forward(pair)
        for i in range(self.n_blocks):
            h = self.layers[f"block{i}"].forward(h)
        e = self.layers["pool"].forward(h).reshape(N, K, -1)
        e = self.layers["kmax"].forward(e)
        if self.spec.use_static_branch:
            if static is None:
                raise ShapeError("model uses static features but none were given")
            s = self.layers["static_act"].forward(self.layers["static"].forward(static))
            e = np.concatenate([e, s], axis=1)
        f = self.layers["fuse_act"].forward(self.layers["fuse"].forward(e))
        self._NKT = (N, K, T)
        return self.layers["head"].forward(f)

    def backward(self, dlogits):
        N, K, T = self._NKT
        de = self.layers["fuse"].backward(self.layers["fuse_act"].backward(self.layers["head"].backward(dlogits)))
        if self.spec.use_static_branch:
            d = self.spec.d_model
            self.layers["static"].backward(self.layers["static_act"].backward(de[:, d:]))
            de = de[:, :d]
        dh = self.layers["pool"].backward(self.layers["kmax"].backward(de).reshape(N * K, -1))
        for i in reversed(range(self.n_blocks)):
            dh = self.layers[f"block{i}"].backward(dh)
        dpair = self.layers["embed"].backward(dh).reshape(N, K, T, -1)
        self.layers["gnn"].backward(self.layers["gnn_act"].backward(dpair[..., len(self.base_pos):]))


class LSTMNet(Network):
    """Stacked LSTM over time, last hidden state, optional static branch, linear head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        n_in = len(spec.input_channels)
        for i, h in enumerate(spec.lstm_layer_sizes):
            self.layers[f"lstm{i}"] = LSTM(n_in, h, rng)
            n_in = h
        self.n_lstm = len(spec.lstm_layer_sizes)
        if spec.use_static_branch:
            self.layers["static"] = Dense(spec.n_static, spec.d_static, rng)
            self.layers["static_act"] = ReLU()
            n_in += spec.d_static
        self.layers["head"] = Dense(n_in, 2, rng)

    def forward(self, X, static=None):
        h = np.transpose(X, (0, 2, 1))
        for i in range(self.n_lstm):
            h = self.layers[f"lstm{i}"].forward(h)
        self._T = h.shape[1]
        e = h[:, -1]
        if self.spec.use_static_branch:
            if static is None:
                raise ShapeError("model uses static features but none were given")
            e = np.concatenate([e, self.layers["static_act"].forward(self.layers["static"].forward(static))], axis=1)
        return self.layers["head"].forward(e)

    def backward(self, dlogits):
        de = self.layers["head"].backward(dlogits)
        h_last = self.spec.lstm_layer_sizes[-1]
        if self.spec.use_static_branch:
            self.layers["static"].backward(self.layers["static_act"].backward(de[:, h_last:]))
            de = de[:, :h_last]
        dh = np.zeros((de.shape[0], self._T, h_last))
        dh[:, -1] = de
        for i in reversed(range(self.n_lstm)):
            dh = self.layers[f"lstm{i}"].backward(dh)


class MLPNet(Network):
    """Flatten, one hidden tanh layer, linear head. Used to check dense backprop."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.layers["hidden"] = Dense(n_in, hidden, rng)
        self.layers["act"] = make_activation("tanh")
        self.layers["head"] = Dense(hidden, 2, rng)

    def forward(self, X, static=None):
        self._shape = X.shape
        return self.layers["head"].forward(self.layers["act"].forward(self.layers["hidden"].forward(X.reshape(len(X), -1))))

    def backward(self, dlogits):
        self.layers["hidden"].backward(self.layers["act"].backward(self.layers["head"].backward(dlogits)))


def build_network(spec: ModelSpec, rng: np.random.Generator) -> Network:
    if spec.variant is Variant.LTRANS:
        return TransformerNet(spec, rng)
    if spec.variant is Variant.GENTRAP:
        return GenTrapNet(spec, rng)
    return LSTMNet(spec, rng)


# ---------------------------------------------------------------------------
# desk-scale defaults


def default_spec(
    variant: Variant | str,
    channel_meta: Sequence[ChannelMeta],
    input_channels: Sequence[int] | None = None,
    T: int = 4,
    n_static: int = 0,
    K: int = 3,
    **overrides,
) -> ModelSpec:
    """Desk-scale specification of ``variant`` over the given channels.

    GENTRAP uses two encoder blocks and LTRANS one; LSTM_PLUS stacks
    128/64/32/16 units and LLSTM_PLUS keeps the last two widths. Static
    branches are enabled for the full models when static features exist.
    """
    variant = Variant(variant)
    if input_channels is None:
        input_channels = range(len(channel_meta))
    input_channels = tuple(input_channels)
    kinds = tuple(channel_meta[i].kind for i in input_channels)
    kw: dict = dict(variant=variant, input_channels=input_channels, channel_kinds=kinds, T=T, K=K)
    if variant is Variant.GENTRAP:
        kw.update(n_encoder_blocks=2, use_static_branch=n_static > 0, n_static=n_static)
    elif variant is Variant.LTRANS:
        kw.update(n_encoder_blocks=1)
    elif variant is Variant.LSTM_PLUS:
        kw.update(lstm_layer_sizes=(128, 64, 32, 16), use_static_branch=n_static > 0, n_static=n_static)
    else:
        kw.update(lstm_layer_sizes=(32, 16))
    kw.update(overrides)
    return ModelSpec(**kw)
