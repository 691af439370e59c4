"""Model-agnostic Shapley attributions for time-series classifiers."""

from .kernels import BACKEND
from .shapley import (
    BackgroundSet,
    SaliencyMap,
    base_value,
    batch_explain,
    exact_shap,
    mask_with_background,
    sampling_shap,
)
from .store import load_saliency, save_saliency

__all__ = [
    "BACKEND",
    "BackgroundSet",
    "SaliencyMap",
    "base_value",
    "batch_explain",
    "exact_shap",
    "load_saliency",
    "mask_with_background",
    "sampling_shap",
    "save_saliency",
]
