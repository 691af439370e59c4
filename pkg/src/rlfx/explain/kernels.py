"""Coalition kernel selection.

The compiled extension is used when it imports; setting ``RLFX_PURE_PYTHON=1``
forces the numpy fallback. Both produce identical arrays.
"""

from __future__ import annotations

import os

import numpy as np

from . import _coalition_py

if os.environ.get("RLFX_PURE_PYTHON", "") not in ("", "0"):
    _impl = _coalition_py
    BACKEND = "python"
else:
    try:
        from . import _coalition as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _coalition_py
        BACKEND = "python"


def coalition_batch(x, bg, perms, bg_idx) -> np.ndarray:
    return _impl.coalition_batch(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(bg, dtype=np.float64),
        np.ascontiguousarray(perms, dtype=np.int64),
        np.ascontiguousarray(bg_idx, dtype=np.int64),
    )


def scatter_marginals(preds, perms) -> np.ndarray:
    return _impl.scatter_marginals(
        np.ascontiguousarray(preds, dtype=np.float64),
        np.ascontiguousarray(perms, dtype=np.int64),
    )
