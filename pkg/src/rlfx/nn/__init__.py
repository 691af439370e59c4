"""Numpy neural toolkit and the failure-prediction architectures."""

from .checkpoint import load_model, save_model
from .gradcheck import gradient_check, toy_spec
from .models import ModelSpec, Variant, build_network, default_spec, gnn_max_aggregate, param_count
from .training import ClassWeighting, TrainConfig, TrainedModel, train

__all__ = [
    "ClassWeighting",
    "ModelSpec",
    "TrainConfig",
    "TrainedModel",
    "Variant",
    "build_network",
    "default_spec",
    "gnn_max_aggregate",
    "gradient_check",
    "load_model",
    "param_count",
    "save_model",
    "toy_spec",
    "train",
]
