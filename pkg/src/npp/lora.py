"""Low-rank surrogate paths: attach, train, merge, and parameter accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import AdapterPair, DenseModel
from .seeding import substream
from .training import TrainHyper, TrainReport, train


@dataclass(frozen=True)
class AdapterPlan:
    rank: int
    layers: object = "all"  # "all", ("last", k) or an explicit sequence of layer indices

    def select(self, model: DenseModel) -> list[int]:
        n = len(model.layers)
        sel = self.layers
        if sel in ("all", "all_linear"):
            return list(range(n))
        if isinstance(sel, tuple) and len(sel) == 2 and sel[0] == "last":
            k = int(sel[1])
            if not 1 <= k <= n:
                raise ConfigError(f"last_k({k}) invalid for a {n}-layer model")
            return list(range(n - k, n))
        idx = sorted({int(i) for i in sel})
        if not idx:
            raise ConfigError("adapter plan selects no layers")
        for i in idx:
            if not 0 <= i < n:
                raise ConfigError(f"adapter plan names layer {i}, model has {n}")
        return idx


def last_k(k: int) -> tuple:
    return ("last", k)


def attach_adapters(model: DenseModel, plan: AdapterPlan, seed=0) -> DenseModel:
    """Copy of ``model`` with rank-r adapters on the selected layers and every base parameter frozen.

    ``A`` entries are N(0, 1/D) and ``B`` is zero, so the output is unchanged at attach time.
    """
    if plan.rank < 1:
        raise ConfigError("adapter rank must be >= 1")
    selected = plan.select(model)
    out = model.copy()
    for i in selected:
        layer = out.layers[i]
        d, h = layer.in_dim, layer.out_dim
        if plan.rank >= min(d, h):
            raise ConfigError(f"rank {plan.rank} is not low-rank for a {d}x{h} layer (layer {i})")
        rng = substream(seed, "adapter_init", i)
        layer.adapter = AdapterPair(
            rng.standard_normal((d, plan.rank)) / np.sqrt(d),
            np.zeros((plan.rank, h)),
        )
    for layer in out.layers:
        layer.frozen = True
    return out


def train_adapters(model: DenseModel, data, hyper: TrainHyper, eval_data=None, mode=None) -> TrainReport:
    """Train only the adapter factors; the base stays byte-identical."""
    if not model.has_adapters():
        raise ConfigError("no adapters attached")
    for layer in model.layers:
        if not layer.frozen:
            raise ConfigError("base layers must be frozen before adapter training")
    return train(model, data, hyper, eval_data=eval_data, mode=mode)


def merge(weight, adapter: AdapterPair) -> np.ndarray:
    weight = np.asarray(weight, dtype=np.float64)
    if adapter.A.shape[0] != weight.shape[0] or adapter.B.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"adapter {adapter.A.shape}x{adapter.B.shape} incompatible with weight {weight.shape}"
        )
    return weight + adapter.A @ adapter.B


def merge_model(model: DenseModel) -> DenseModel:
    """Fold every adapter into its base weight; activation quantization settings are kept."""
    out = model.copy()
    for layer in out.layers:
        if layer.adapter is not None:
            layer.weight = merge(layer.weight, layer.adapter)
            layer.adapter = None
            layer.qweight = None
    return out


def surrogate_param_count(model: DenseModel) -> int:
    return sum(layer.adapter.num_params for layer in model.layers if layer.adapter is not None)


def trainable_fraction(model: DenseModel, base_params=None) -> float:
    """Adapter parameters ``sum r(D+H)`` over base weight count (or an explicit base size)."""
    if base_params is None:
        base_params = sum(layer.weight.size for layer in model.layers)
    return surrogate_param_count(model) / base_params
