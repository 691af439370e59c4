"""Shapley attributions over the (channel, time) cells of one instance.

Features are the ``M = C * T`` cells of an instance, flattened row-major
(channel-major), optionally followed by static features. A feature is
"absent" when its value is taken from a background instance.

``model_fn`` arguments are vectorised: they take a batch ``(n, C, T)`` and
return ``n`` failure probabilities.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..data import TimeSeriesDataset
from ..errors import ArgumentError, ShapeError
from . import kernels

log = logging.getLogger(__name__)

ModelFn = Callable[[np.ndarray], np.ndarray]
MAX_EXACT_FEATURES = 20


@dataclass
class SaliencyMap:
    """Attributions ``phi[c, t]`` for one explained instance.

    ``phi_static`` holds the attributions of static features when the model
    consumes them; ``stderr`` is the Monte Carlo standard error of each
    entry (zero for exact attributions).
    """

    phi: np.ndarray
    base_value: float
    model_output: float
    instance_id: str = ""
    P_used: int = 0
    seed: int = 0
    stderr: np.ndarray | None = None
    phi_static: np.ndarray | None = None
    normalized: bool = False

    @property
    def residual(self) -> float:
        total = self.phi.sum() + (0.0 if self.phi_static is None else self.phi_static.sum())
        return float(self.model_output - self.base_value - total)


@dataclass(frozen=True)
class BackgroundSet:
    """Reference instances ``(B, C, T)`` used to stand in for absent features."""

    instances: np.ndarray
    static: np.ndarray | None = None
    source_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        if inst.ndim != 3 or inst.shape[0] < 1:
            raise ArgumentError(f"background needs B >= 1 instances of shape (C, T), got {inst.shape}")
        object.__setattr__(self, "instances", inst)
        if self.static is not None:
            s = np.asarray(self.static, dtype=np.float64)
            if s.shape[0] != inst.shape[0]:
                raise ShapeError("background static rows differ from instance count")
            object.__setattr__(self, "static", s)

    @property
    def B(self) -> int:
        return self.instances.shape[0]

    @classmethod
    def from_dataset(cls, dataset: TimeSeriesDataset, indices: Sequence[int] | np.ndarray,
                     size: int, seed: int) -> "BackgroundSet":
        """Draw ``size`` distinct instances (without replacement) among ``indices``."""
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) == 0:
            raise ArgumentError("cannot draw a background from an empty index set")
        rng = np.random.default_rng([seed, 3])
        pick = np.sort(rng.choice(indices, size=min(size, len(indices)), replace=False))
        static = None if dataset.static is None else dataset.static[pick]
        return cls(dataset.values[pick], static, tuple(int(i) for i in pick))


def mask_with_background(X: np.ndarray, mask: np.ndarray, background_instance: np.ndarray) -> np.ndarray:
    """``X`` where ``mask`` is true, the background instance elsewhere."""
    X = np.asarray(X)
    mask = np.asarray(mask, dtype=bool)
    b = np.asarray(background_instance)
    if X.shape != mask.shape or X.shape != b.shape:
        raise ShapeError(f"shapes disagree: X {X.shape}, mask {mask.shape}, background {b.shape}")
    return np.where(mask, X, b)


# ---------------------------------------------------------------------------
# flat-vector cores


def _exact_flat(flat_fn: ModelFn, x: np.ndarray, bg: np.ndarray, chunk_rows: int = 1 << 16):
    """Exact Shapley values of the ``M`` entries of ``x`` against background rows ``bg``."""
    M = x.size
    B = bg.shape[0]
    n_sets = 1 << M
    masks = np.arange(n_sets, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    v = np.empty(n_sets)
    per = max(1, chunk_rows // B)
    for start in range(0, n_sets, per):
        sel = bits[start:start + per]
        rows = np.where(sel[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, M)
        v[start:start + len(sel)] = np.asarray(flat_fn(rows), dtype=np.float64).reshape(len(sel), B).mean(axis=1)
    size = bits.sum(axis=1)
    fact = [math.factorial(k) for k in range(M + 1)]
    weight = np.array([fact[s] * fact[M - s - 1] / fact[M] for s in range(M)])
    phi = np.empty(M)
    for i in range(M):
        without = masks[~bits[:, i]]
        phi[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    return phi, float(v[0]), float(v[-1])


def chunk_permutations(M: int) -> int:
    """Permutations evaluated per model call; a function of ``M`` only."""
    return max(1, 4096 // (M + 1))


def _permutation_draws(seed: int, start: int, stop: int, M: int, B: int):
    perms = np.empty((stop - start, M), dtype=np.int64)
    bg_idx = np.empty(stop - start, dtype=np.int64)
    for j, p in enumerate(range(start, stop)):
        rng = np.random.default_rng([seed, p])
        perms[j] = rng.permutation(M)
        bg_idx[j] = rng.integers(B)
    return perms, bg_idx


def _sampling_flat(flat_fn: ModelFn, x: np.ndarray, bg: np.ndarray, P: int, seed: int, workers: int = 1):
    """Per-permutation marginal contributions, shape ``(P, M)``.

    Permutation ``p`` and its background row are drawn from a generator
    seeded with ``(seed, p)``, so the matrix does not depend on how chunks
    are distributed over workers.
    """
    M = x.size
    B = bg.shape[0]
    size = chunk_permutations(M)
    bounds = [(s, min(s + size, P)) for s in range(0, P, size)]
    contrib = np.empty((P, M))

    def run(bound):
        start, stop = bound
        perms, bg_idx = _permutation_draws(seed, start, stop, M, B)
        rows = kernels.coalition_batch(x, bg, perms, bg_idx)
        preds = np.asarray(flat_fn(rows), dtype=np.float64)
        contrib[start:stop] = kernels.scatter_marginals(preds, perms)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for b in bounds:
            run(b)
    return contrib


def _finish(contrib: np.ndarray, f_x: float, phi0: float, normalize: bool):
    P = contrib.shape[0]
    phi = contrib.mean(axis=0)
    if P > 1:
        stderr = contrib.std(axis=0, ddof=1) / math.sqrt(P)
    else:
        stderr = np.zeros_like(phi)
    if normalize:
        residual = f_x - phi0 - phi.sum()
        var = stderr**2
        total = var.sum()
        w = var / total if total > 0 else np.full(phi.size, 1.0 / phi.size)
        phi = phi + residual * w
        # absorb the rounding left by the rescale into the largest-weight entry
        phi[int(np.argmax(w))] += f_x - phi0 - phi.sum()
    return phi, stderr


# ---------------------------------------------------------------------------
# public entry points


def _check_pair(X: np.ndarray, background: BackgroundSet) -> None:
    if X.ndim != 2:
        raise ShapeError(f"explained instance must be C x T, got {X.shape}")
    if background.instances.shape[1:] != X.shape:
        raise ShapeError(f"background instances {background.instances.shape[1:]} differ from instance {X.shape}")


def exact_shap(model_fn: ModelFn, X: np.ndarray, background: BackgroundSet, instance_id: str = "") -> SaliencyMap:
    """Exact Shapley values by enumerating all ``2**(C*T)`` coalitions.

    The value of a coalition is the mean model output over the background,
    each background instance filling the absent cells in turn.
    """
    X = np.asarray(X, dtype=np.float64)
    _check_pair(X, background)
    M = X.size
    if M > MAX_EXACT_FEATURES:
        raise ShapeError(f"exact enumeration needs C*T <= {MAX_EXACT_FEATURES}, got {M}")
    shape = X.shape

    def flat_fn(rows):
        return model_fn(rows.reshape((-1,) + shape))

    bg = background.instances.reshape(background.B, M)
    phi, phi0, f_x = _exact_flat(flat_fn, X.ravel(), bg)
    return SaliencyMap(phi.reshape(shape), phi0, f_x, instance_id, P_used=0, seed=0,
                       stderr=np.zeros(shape), normalized=True)


def base_value(model_fn: ModelFn, background: BackgroundSet) -> float:
    return float(np.mean(model_fn(background.instances)))


def sampling_shap(
    model_fn: ModelFn,
    X: np.ndarray,
    background: BackgroundSet,
    P: int,
    seed: int,
    normalize: bool = True,
    instance_id: str = "",
    workers: int = 1,
    phi0: float | None = None,
) -> SaliencyMap:
    """Monte Carlo Shapley values from ``P`` random feature permutations.

    Each permutation contributes one marginal sample per feature: the
    change in model output as the feature joins the prefix preceding it,
    with one background instance (drawn per permutation) filling the rest.

    Parameters
    ----------
    normalize
        Spread the additivity residual ``f(X) - phi0 - sum(phi)`` over the
        features in proportion to their sampling variance, so the
        attributions sum exactly to ``f(X) - phi0``.
    workers
        Threads evaluating permutation chunks; results do not depend on it.
    phi0
        Cached base value; computed from the background when omitted.
    """
    if P < 1:
        raise ArgumentError(f"P must be >= 1, got {P}")
    X = np.asarray(X, dtype=np.float64)
    _check_pair(X, background)
    shape = X.shape

    def flat_fn(rows):
        return model_fn(rows.reshape((-1,) + shape))

    f_x = float(np.asarray(model_fn(X[None]), dtype=np.float64)[0])
    if phi0 is None:
        phi0 = base_value(model_fn, background)
    contrib = _sampling_flat(flat_fn, X.ravel(), background.instances.reshape(background.B, -1), P, seed, workers)
    phi, stderr = _finish(contrib, f_x, phi0, normalize)
    return SaliencyMap(phi.reshape(shape), phi0, f_x, instance_id, P_used=P, seed=seed,
                       stderr=stderr.reshape(shape), normalized=normalize)


def batch_explain(
    model,
    dataset: TimeSeriesDataset,
    selection: Sequence[int],
    P: int,
    seed: int,
    background: BackgroundSet | None = None,
    normalize: bool = True,
    workers: int = 1,
    background_size: int = 50,
    errors: list | None = None,
) -> list[SaliencyMap]:
    """Explain selected instances of a raw dataset with a trained model.

    Attributions are computed in the model's normalised input space over
    its input channels (and static features, if the model uses them), then
    laid out on the dataset's full ``C x T`` grid with zeros for channels
    the model does not read. Instance ``i`` uses seed ``seed ^ i``.

    ``background`` holds raw dataset instances; by default
    ``background_size`` instances are drawn from the whole dataset.
    Instances that fail are logged, appended to ``errors`` as
    ``(index, message)`` and skipped.
    """
    selection = [int(i) for i in selection]
    if not selection:
        log.warning("batch_explain called with an empty selection")
        return []
    n = dataset.n_instances
    bad = [i for i in selection if not 0 <= i < n]
    if bad:
        raise ArgumentError(f"selection indices out of range [0, {n}): {bad[:5]}")
    if background is None:
        background = BackgroundSet.from_dataset(dataset, np.arange(n), background_size, seed)
    if background.instances.shape[1:] != dataset.values.shape[1:]:
        raise ShapeError(f"background {background.instances.shape[1:]} vs dataset {dataset.values.shape[1:]}")

    chans = list(model.spec.input_channels)
    C_in, T = len(chans), dataset.T
    use_static = model.spec.use_static_branch
    S = model.spec.n_static if use_static else 0
    norm = model.norm_stats

    def prep(values, static):
        x = norm.apply(values)[:, chans].reshape(len(values), C_in * T)
        return np.concatenate([x, static], axis=1) if use_static else x

    bg_static = background.static if use_static else None
    if use_static and (bg_static is None or dataset.static is None):
        raise ShapeError("model uses static features but the dataset or background has none")
    bg_flat = prep(background.instances, bg_static)

    def flat_fn(rows):
        X = rows[:, :C_in * T].reshape(-1, C_in, T)
        return model.forward(X, rows[:, C_in * T:] if use_static else None)

    phi0 = float(np.mean(flat_fn(bg_flat)))
    X_all = prep(dataset.values[selection], dataset.static[selection] if use_static else None)
    ids = dataset.instance_ids(selection)

    def one(j: int) -> SaliencyMap:
        i = selection[j]
        x = X_all[j]
        s = seed ^ i
        f_x = float(flat_fn(x[None])[0])
        contrib = _sampling_flat(flat_fn, x, bg_flat, P, s, 1)
        flat, stderr = _finish(contrib, f_x, phi0, normalize)
        phi = np.zeros((dataset.n_channels, T))
        se = np.zeros((dataset.n_channels, T))
        phi[chans] = flat[:C_in * T].reshape(C_in, T)
        se[chans] = stderr[:C_in * T].reshape(C_in, T)
        return SaliencyMap(phi, phi0, f_x, ids[j], P_used=P, seed=s, stderr=se,
                           phi_static=flat[C_in * T:].copy() if use_static else None, normalized=normalize)

    def guarded(j: int):
        try:
            return one(j)
        except Exception as exc:  # isolate per-instance failures
            msg = f"{type(exc).__name__}: {exc}"
            log.warning("explaining instance %d failed: %s", selection[j], msg)
            if errors is not None:
                errors.append((selection[j], msg))
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(guarded, range(len(selection))))
    else:
        results = [guarded(j) for j in range(len(selection))]
    return [r for r in results if r is not None]
