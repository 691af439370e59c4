"""Shapley explanations, channel pruning and refinement for radio link failure predictors."""

__version__ = "0.1.0"
