"""Static multiplicative Gaussian weight perturbation (process variability)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .seeding import substream


@dataclass(frozen=True)
class PerturbSpec:
    sigma: float
    seed: int = 0
    layers: tuple | None = None  # None perturbs every layer
    literal: bool = False  # w + w*(1+n) as printed, instead of w*(1+n)

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")


def perturb_weights(model, spec: PerturbSpec):
    """Copy of ``model`` with in-scope weights scaled by ``1 + n``, ``n ~ N(0, sigma^2)``.

    Each layer draws from its own substream, so the scope does not change the noise
    a layer receives. Biases and adapters are untouched.
    """
    n_layers = len(model.layers)
    scope = range(n_layers) if spec.layers is None else sorted(set(spec.layers))
    for i in scope:
        if not 0 <= i < n_layers:
            raise ConfigError(f"perturb scope names layer {i}, model has {n_layers}")
    out = model.copy()
    for i in scope:
        layer = out.layers[i]
        noise = substream(spec.seed, "perturb", i).standard_normal(layer.weight.shape) * spec.sigma
        if spec.literal:
            layer.weight = layer.weight + layer.weight * (1.0 + noise)
        elif spec.sigma > 0:
            layer.weight = layer.weight * (1.0 + noise)
        # perturbed values are no longer on the quantization grid
        layer.qweight = None if spec.sigma > 0 or spec.literal else layer.qweight
    return out
