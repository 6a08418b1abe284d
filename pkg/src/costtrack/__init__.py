"""Contrastive one-stage vision-language tracker with a small-object benchmark toolkit."""
from .model import COST, ModelConfig
from .tensor import GradError, ShapeError, Tensor, no_grad

__version__ = "0.1.0"
