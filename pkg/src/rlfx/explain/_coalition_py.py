"""Pure-numpy coalition kernels (fallback for the compiled extension)."""

from __future__ import annotations

import numpy as np


def coalition_batch(x: np.ndarray, bg: np.ndarray, perms: np.ndarray, bg_idx: np.ndarray) -> np.ndarray:
    """Prefix coalitions of every permutation, stacked as rows.

    Row ``p * (M + 1) + k`` holds ``x`` at the first ``k`` features of
    ``perms[p]`` and ``bg[bg_idx[p]]`` elsewhere.
    """
    P, M = perms.shape
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(M)[None, :], axis=1)
    mask = rank[:, None, :] < np.arange(M + 1)[None, :, None]
    rows = np.where(mask, x[None, None, :], bg[bg_idx][:, None, :])
    return rows.reshape(P * (M + 1), M)


def scatter_marginals(preds: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Marginal contribution of each feature per permutation, shape ``(P, M)``."""
    P, M = perms.shape
    steps = np.diff(preds.reshape(P, M + 1), axis=1)
    out = np.empty((P, M))
    np.put_along_axis(out, perms, steps, axis=1)
    return out
