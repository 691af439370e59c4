"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import logging

import numpy as np

from ..data import ChannelKind
from .layers import softmax_cross_entropy
from .models import MLPNet, ModelSpec, Network, Variant, build_network, param_count

log = logging.getLogger(__name__)


def toy_spec(variant: Variant | str, T: int = 3) -> ModelSpec:
    """A small (< 2k parameters) spec of ``variant`` for gradient checks."""
    variant = Variant(variant)
    rl, pos, ws = ChannelKind.RL_KPI, ChannelKind.POSITIONAL, ChannelKind.WS
    if variant is Variant.GENTRAP:
        kinds = (rl, rl, pos, ws, ws, ws, ws)  # two WS features at K=2 stations
        return ModelSpec(variant, tuple(range(len(kinds))), kinds, T=T, d_model=8, n_heads=2, n_encoder_blocks=1,
                         d_ff=8, K=2, use_static_branch=True, n_static=3, d_gnn=4, d_static=4, d_fuse=6)
    kinds = (rl, rl, rl, pos)
    if variant is Variant.LTRANS:
        return ModelSpec(variant, tuple(range(4)), kinds, T=T, d_model=8, n_heads=2, n_encoder_blocks=2, d_ff=12)
    if variant is Variant.LSTM_PLUS:
        return ModelSpec(variant, tuple(range(4)), kinds, T=T, lstm_layer_sizes=(8, 6, 4, 3),
                         use_static_branch=True, n_static=3, d_static=4)
    return ModelSpec(variant, tuple(range(4)), kinds, T=T, lstm_layer_sizes=(6, 4))


def check_network(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    static: np.ndarray | None = None,
    n_params: int = 50,
    step: float = 1e-4,
    seed: int = 0,
    class_weight: np.ndarray | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``n_params`` scalar parameters are drawn at random. Entries whose
    perturbation flips a ReLU mask or a max selection are redrawn, since
    the loss is not differentiable there.
    """

    def loss_at() -> float:
        return softmax_cross_entropy(net.forward(X, static), y, class_weight)[0]

    _, grad = softmax_cross_entropy(net.forward(X, static), y, class_weight)
    net.backward(grad)
    analytic = {k: g.copy() for k, g in net.grads().items()}
    base_kinks = [k.copy() for k in net.kink_state()]

    params = net.params()
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(int(offsets[-1]))

    def same_kinks() -> bool:
        return all(np.array_equal(a, b) for a, b in zip(base_kinks, net.kink_state()))

    worst, used = 0.0, 0
    for flat in candidates:
        if used >= n_params:
            break
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[j]
        idx = np.unravel_index(int(flat - offsets[j]), params[name].shape)
        p = params[name]
        orig = p[idx]
        p[idx] = orig + step
        plus = loss_at()
        ok = same_kinks()
        p[idx] = orig - step
        minus = loss_at()
        ok = ok and same_kinks()
        p[idx] = orig
        if not ok:
            continue
        numeric = (plus - minus) / (2 * step)
        a = analytic[name][idx]
        rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-7)
        worst = max(worst, rel)
        used += 1
    if used < n_params:
        log.warning("only %d differentiable parameters checked", used)
    return float(worst)


def _toy_batch(spec: ModelSpec, rng: np.random.Generator, n: int):
    X = rng.standard_normal((n, len(spec.input_channels), spec.T))
    y = np.arange(n) % 2
    S = rng.standard_normal((n, spec.n_static)) if spec.use_static_branch else None
    return X, y, S


def gradient_check(spec: ModelSpec | None, seed: int = 0, n_params: int = 50, n_instances: int = 6) -> float:
    """Max relative gradient error of a freshly initialised ``spec``.

    ``spec=None`` checks a dense-only network (flatten, tanh hidden layer,
    linear head).
    """
    rng = np.random.default_rng([seed, 7])
    if spec is None:
        net: Network = MLPNet(6, 8, np.random.default_rng([seed, 0]))
        X = rng.standard_normal((n_instances, 2, 3))
        y = np.arange(n_instances) % 2
        return check_network(net, X, y, None, n_params=n_params, seed=seed)
    if param_count(spec) > 2000:
        log.warning("gradient check on a %d-parameter spec", param_count(spec))
    net = build_network(spec, np.random.default_rng([seed, 0]))
    X, y, S = _toy_batch(spec, rng, n_instances)
    return check_network(net, X, y, S, n_params=n_params, seed=seed, class_weight=np.array([1.0, 2.0]))
