"""Training loop, trained-model container and inference entry points."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..data import FoldSpec, NormStats, TimeSeriesDataset, count_channel_mask, fit_norm_stats, split_indices
from ..errors import ArgumentError, ShapeError, TrainingError
from .layers import Adam, softmax, softmax_cross_entropy
from .models import ModelSpec, Network, build_network, param_count

log = logging.getLogger(__name__)


class ClassWeighting(str, Enum):
    NONE = "NONE"
    INVERSE_FREQUENCY = "INVERSE_FREQUENCY"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-3
    epochs: int = 100
    class_weighting: ClassWeighting = ClassWeighting.INVERSE_FREQUENCY
    seed: int = 0
    early_stop_patience: int = 30
    log_scale_counts: bool = True

    def __post_init__(self):
        object.__setattr__(self, "class_weighting", ClassWeighting(self.class_weighting))
        if not self.learning_rate >= 0:
            raise ArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stop_patience < 1:
            raise ArgumentError("early_stop_patience must be >= 1")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "class_weighting": self.class_weighting.value,
            "seed": self.seed,
            "early_stop_patience": self.early_stop_patience,
            "log_scale_counts": self.log_scale_counts,
        }


def _f1(prob: np.ndarray, labels: np.ndarray) -> float:
    pred = prob >= 0.5
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def _round_f32(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.astype(np.float32).astype(np.float64) for k, v in weights.items()}


@dataclass
class TrainedModel:
    """A network together with everything needed to reproduce its predictions.

    ``norm_stats`` covers every channel of the dataset the model was trained
    on; ``spec.input_channels`` selects the subset the network consumes.
    """

    spec: ModelSpec
    weights: dict[str, np.ndarray]
    norm_stats: NormStats
    seed: int = 0
    train_log: list[dict] = field(default_factory=list)
    network: Network | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.network is None:
            self.network = build_network(self.spec, np.random.default_rng(0))
            self.network.load(self.weights)

    @property
    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    @property
    def n_features(self) -> int:
        return len(self.spec.input_channels)

    def forward(self, X: np.ndarray, static: np.ndarray | None = None) -> np.ndarray:
        """Failure probability for normalised inputs ``(N, C_in, T)`` or one ``(C_in, T)``."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
            static = None if static is None else np.asarray(static, dtype=np.float64)[None]
        if X.ndim != 3 or X.shape[1:] != (self.n_features, self.spec.T):
            raise ShapeError(f"model expects (N, {self.n_features}, {self.spec.T}) inputs, got {X.shape}")
        if self.spec.use_static_branch:
            if static is None or static.shape != (X.shape[0], self.spec.n_static):
                got = None if static is None else static.shape
                raise ShapeError(f"model expects static features ({X.shape[0]}, {self.spec.n_static}), got {got}")
        else:
            static = None
        logits = self.network.forward(X, static)
        p = softmax(logits, axis=1)[:, 1]
        return p[0] if single else p

    def prepare(self, dataset: TimeSeriesDataset) -> tuple[np.ndarray, np.ndarray | None]:
        """Normalise a raw dataset and select the model's input channels."""
        if dataset.n_channels != len(self.norm_stats.mean):
            raise ShapeError(f"dataset has {dataset.n_channels} channels, model was fitted on {len(self.norm_stats.mean)}")
        if dataset.T != self.spec.T:
            raise ShapeError(f"dataset T={dataset.T}, model T={self.spec.T}")
        X = self.norm_stats.apply(dataset.values)[:, list(self.spec.input_channels)]
        return X, (dataset.static if self.spec.use_static_branch else None)

    def predict_proba(self, dataset: TimeSeriesDataset, batch_size: int = 4096) -> np.ndarray:
        X, S = self.prepare(dataset)
        out = [self.forward(X[i:i + batch_size], None if S is None else S[i:i + batch_size])
               for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


def class_weights(labels: np.ndarray, mode: ClassWeighting) -> np.ndarray | None:
    if mode is ClassWeighting.NONE:
        return None
    n = len(labels)
    counts = np.bincount(labels.astype(np.int64), minlength=2)
    if counts[1] == 0:
        raise TrainingError("no positive labels in the training split; inverse-frequency weighting is undefined")
    if counts[0] == 0:
        raise TrainingError("no negative labels in the training split")
    return n / (2.0 * counts)


def init_network(spec: ModelSpec, seed: int) -> Network:
    net = build_network(spec, np.random.default_rng([seed, 0]))
    net.load(_round_f32(net.params()))
    return net


def fit(
    spec: ModelSpec,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    S_train: np.ndarray | None = None,
    S_val: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Train on prepared arrays; returns the best weights and the epoch log.

    Weights are selected by validation F1, ties broken by lower validation
    loss. The returned weights are rounded to float32 so checkpoints hold
    them exactly.
    """
    if len(X_train) == 0:
        raise TrainingError("empty training split")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    cw = class_weights(y_train, cfg.class_weighting)
    net = init_network(spec, cfg.seed)
    opt = Adam(cfg.learning_rate)
    order_rng = np.random.default_rng([cfg.seed, 1])
    S_train = S_train if spec.use_static_branch else None
    S_val = S_val if spec.use_static_branch else None

    best_key, best_weights, stale = None, {k: v.copy() for k, v in net.params().items()}, 0
    train_log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(X_train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = net.forward(X_train[idx], None if S_train is None else S_train[idx])
            loss, grad = softmax_cross_entropy(logits, y_train[idx], cw)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged (NaN/Inf) at epoch {epoch}")
            net.backward(grad)
            opt.step(net.params(), net.grads())
            total += loss * len(idx)
        train_loss = total / len(order)
        record = {"epoch": epoch, "train_loss": train_loss}
        if len(X_val):
            val_logits = net.forward(X_val, S_val)
            val_loss, _ = softmax_cross_entropy(val_logits, y_val, cw)
            if not np.isfinite(val_loss):
                raise TrainingError(f"validation loss diverged (NaN/Inf) at epoch {epoch}")
            val_f1 = _f1(softmax(val_logits, axis=1)[:, 1], y_val)
            record.update(val_loss=val_loss, val_f1=val_f1)
            key = (val_f1, -val_loss)
        else:
            key = (0.0, -train_loss)
        train_log.append(record)
        if best_key is None or key > best_key:
            best_key, stale = key, 0
            best_weights = {k: v.copy() for k, v in net.params().items()}
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                log.info("early stop at epoch %d", epoch)
                break
    return _round_f32(best_weights), train_log


def train(
    spec: ModelSpec,
    dataset: TimeSeriesDataset,
    fold: FoldSpec | None,
    cfg: TrainConfig,
) -> TrainedModel:
    """Fit ``spec`` on the fold's training range, selecting on its validation range.

    Normalisation statistics come from the training range only; with
    ``cfg.log_scale_counts`` non-negative KPI channels are signed-log scaled
    first. With ``fold=None`` the whole dataset is used for both training and
    selection.
    """
    if fold is None:
        tr = va = np.arange(dataset.n_instances)
    else:
        parts = split_indices(dataset, fold)
        tr, va = parts["train"], parts["val"]
    if len(tr) == 0:
        raise TrainingError("empty training split")
    if spec.T != dataset.T:
        raise ShapeError(f"spec T={spec.T}, dataset T={dataset.T}")
    if max(spec.input_channels) >= dataset.n_channels:
        raise ShapeError(f"spec references channel {max(spec.input_channels)} of a {dataset.n_channels}-channel dataset")
    mask = count_channel_mask(dataset, tr) if cfg.log_scale_counts else None
    stats = fit_norm_stats(dataset.values[tr], mask)
    X = stats.apply(dataset.values)[:, list(spec.input_channels)]
    S = dataset.static
    if spec.use_static_branch and (S is None or S.shape[1] != spec.n_static):
        raise ShapeError(f"spec wants {spec.n_static} static features, dataset has {None if S is None else S.shape[1]}")
    y = dataset.labels
    weights, train_log = fit(
        spec, X[tr], y[tr], X[va], y[va], cfg,
        None if S is None else S[tr], None if S is None else S[va],
    )
    model = TrainedModel(spec, weights, stats, seed=cfg.seed, train_log=train_log)
    if model.param_count != param_count(spec):
        raise TrainingError("built parameter count disagrees with the closed form")
    return model
