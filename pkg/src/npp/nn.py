"""Dense network core: linear layers, nonlinearities, softmax cross-entropy, reverse-mode gradients.

Weights are stored input-major (``D x H``) so a layer computes ``x @ W + b``.
An attached adapter adds the surrogate term ``(x @ A) @ B`` before the nonlinearity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DimensionError, NumericError

ACTIVATIONS = ("relu", "gelu", "none")
MODES = ("float", "fake_quant", "perturbed")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class AdapterPair:
    A: np.ndarray  # D x r
    B: np.ndarray  # r x H

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def num_params(self) -> int:
        return self.A.size + self.B.size


@dataclass
class LinearLayer:
    weight: np.ndarray
    bias: np.ndarray
    frozen: bool = False
    quant_spec: object = None  # QuantFormat, set by fake quantization
    adapter: AdapterPair | None = None
    qweight: object = None  # QTensor backing ``weight`` when quantized
    act_scale: float | None = None  # calibrated input scale for static activation quantization

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseModel:
    layers: list[LinearLayer]
    activations: list[str]
    # "fp64" or "bfp:<mantissa bits>"; routes the surrogate matvecs in non-float modes
    surrogate_datapath: str = "fp64"

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        if len(self.activations) != len(self.layers):
            raise ConfigError("one activation tag per layer required")
        for i, act in enumerate(self.activations):
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r} on layer {i}")
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].out_dim != self.layers[i].in_dim:
                raise DimensionError(
                    f"in_dim {self.layers[i].in_dim} does not chain with previous out_dim "
                    f"{self.layers[i - 1].out_dim}",
                    layer=i,
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def copy(self) -> DenseModel:
        return copy.deepcopy(self)

    def named_parameters(self, include_frozen=True, include_adapters=True):
        """``(name, array)`` pairs in declaration order."""
        out = []
        for i, layer in enumerate(self.layers):
            if include_frozen or not layer.frozen:
                out.append((f"layers.{i}.weight", layer.weight))
                out.append((f"layers.{i}.bias", layer.bias))
            if include_adapters and layer.adapter is not None:
                out.append((f"layers.{i}.adapter.A", layer.adapter.A))
                out.append((f"layers.{i}.adapter.B", layer.adapter.B))
        return out

    def trainable_parameters(self):
        return self.named_parameters(include_frozen=False, include_adapters=True)

    def base_parameter_count(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def has_adapters(self) -> bool:
        return any(layer.adapter is not None for layer in self.layers)

    def is_quantized(self) -> bool:
        return any(layer.quant_spec is not None for layer in self.layers)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[None, :]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        if len(self.labels) != self.inputs.shape[0]:
            raise DimensionError("inputs and labels disagree on batch size")

    def __len__(self):
        return len(self.labels)


def init_model(widths, activation="relu", seed=0, rng=None) -> DenseModel:
    """He-uniform weights, zero biases; the last layer has no nonlinearity."""
    if len(widths) < 2:
        raise ConfigError("need at least input and output widths")
    rng = rng if rng is not None else np.random.default_rng(seed)
    layers = []
    for d, h in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / d)
        layers.append(LinearLayer(rng.uniform(-bound, bound, size=(d, h)), np.zeros(h)))
    acts = [activation] * (len(layers) - 1) + ["none"]
    return DenseModel(layers, acts)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "gelu":
        return 0.5 * z * (1.0 + erf(z / _SQRT2))
    return z


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "gelu":
        return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.ones_like(z)


def _resolve_mode(model, mode):
    if mode is None:
        return "fake_quant" if model.is_quantized() else "float"
    if mode not in MODES:
        raise ConfigError(f"unknown forward mode {mode!r}")
    return mode


def _surrogate(x, adapter, datapath):
    if datapath == "fp64":
        u = x @ adapter.A
        return u, u @ adapter.B
    from .bfp import BfpConfig, bfp_matmul, parse_datapath

    cfg = parse_datapath(datapath)
    if not isinstance(cfg, BfpConfig):
        raise ConfigError(f"bad surrogate datapath {datapath!r}")
    u = bfp_matmul(x, adapter.A, cfg)
    return u, bfp_matmul(u, adapter.B, cfg)


def _quantize_input(h, layer):
    from .quant import fake_quantize_activations

    spec = layer.quant_spec
    if spec is None or not spec.activation_bits:
        return h
    if spec.activation_scale == "static":
        if layer.act_scale is None:
            raise ConfigError("static activation quantization needs a calibrated act_scale")
        return fake_quantize_activations(h, spec.activation_bits, scale=layer.act_scale)
    return fake_quantize_activations(h, spec.activation_bits)


def _forward(model: DenseModel, x, mode):
    mode = _resolve_mode(model, mode)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.in_dim:
        raise DimensionError(f"input width {x.shape[1]} != in_dim {model.in_dim}", layer=0)
    caches = []
    h = x
    for i, (layer, act) in enumerate(zip(model.layers, model.activations)):
        if h.shape[1] != layer.in_dim:
            raise DimensionError(f"input width {h.shape[1]} != in_dim {layer.in_dim}", layer=i)
        # the low-precision main path reads quantized inputs, the surrogate reads h as is
        hq = _quantize_input(h, layer) if mode == "fake_quant" else h
        z = hq @ layer.weight + layer.bias
        u = None
        if layer.adapter is not None:
            datapath = "fp64" if mode == "float" else model.surrogate_datapath
            u, delta = _surrogate(h, layer.adapter, datapath)
            z = z + delta
        caches.append((h, hq, u, z))
        h = _activate(z, act)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite logits")
    return h, caches


def forward(model: DenseModel, batch, mode=None) -> np.ndarray:
    """Logits ``B x num_classes``.

    ``mode=None`` picks ``fake_quant`` for a quantized model and ``float`` otherwise.
    In ``fake_quant`` mode each layer's main-path input is quantized when the layer's
    format sets ``activation_bits``; backward treats that rounding as identity.
    """
    x = batch.inputs if isinstance(batch, Batch) else batch
    logits, _ = _forward(model, x, mode)
    return logits


def softmax_cross_entropy(logits, labels):
    """Per-sample losses and the per-sample gradient ``softmax - onehot``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DimensionError(f"label out of range for {logits.shape[1]} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    losses = log_z - shifted[rows, labels]
    probs = np.exp(shifted - log_z[:, None])
    dlogits = probs
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


def _backward(model: DenseModel, caches, dlogits):
    """Per-layer pre-activation deltas ``dz`` and surrogate deltas ``du`` (no batch reduction)."""
    dzs = [None] * len(model.layers)
    dus = [None] * len(model.layers)
    g = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        _, _, _, z = caches[i]
        dz = g * _activate_grad(z, model.activations[i])
        dzs[i] = dz
        g = dz @ layer.weight.T
        if layer.adapter is not None:
            du = dz @ layer.adapter.B.T
            dus[i] = du
            g = g + du @ layer.adapter.A.T
    return dzs, dus


def loss_and_grads(model: DenseModel, batch: Batch, include_frozen=False, mode=None):
    """Mean softmax cross-entropy over the batch and its gradients by parameter name."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    logits, caches = _forward(model, batch.inputs, mode)
    losses, dlogits = softmax_cross_entropy(logits, batch.labels)
    n = len(batch)
    dzs, dus = _backward(model, caches, dlogits / n)
    grads = {}
    for i, layer in enumerate(model.layers):
        h, hq, u, _ = caches[i]
        if include_frozen or not layer.frozen:
            grads[f"layers.{i}.weight"] = hq.T @ dzs[i]
            grads[f"layers.{i}.bias"] = dzs[i].sum(axis=0)
        if layer.adapter is not None:
            grads[f"layers.{i}.adapter.A"] = h.T @ dus[i]
            grads[f"layers.{i}.adapter.B"] = u.T @ dzs[i]
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, grads
