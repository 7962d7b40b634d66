"""Precision-polarized inference: a low-precision main path plus full-precision low-rank surrogates."""

__version__ = "0.1.0"

from .errors import ConfigError, DimensionError, FormatError, IntegrityError, NPPError, NumericError, StageError
from .nn import AdapterPair, Batch, DenseModel, LinearLayer, forward, init_model, loss_and_grads

__all__ = [
    "AdapterPair",
    "Batch",
    "ConfigError",
    "DenseModel",
    "DimensionError",
    "FormatError",
    "IntegrityError",
    "LinearLayer",
    "NPPError",
    "NumericError",
    "StageError",
    "forward",
    "init_model",
    "loss_and_grads",
]
