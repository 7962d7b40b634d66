"""Symmetric INT8, FP4 (E2M1) and NF4 quantizers plus whole-model fake quantization."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .errors import ConfigError, IntegrityError

KINDS = ("int8", "fp4_e2m1", "nf4")
GRANULARITIES = ("per_tensor", "per_channel")
INT8_MAX = 127

# Quantile endpoint used by the usual NF4 construction: the mean of the two
# tail probabilities 1 - 0.5/15 and 1 - 0.5/16, so neither extreme level is infinite.
NF4_OFFSET = 0.9677083

_FP4_MAGNITUDES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)


@dataclass(frozen=True)
class QuantFormat:
    kind: str = "nf4"
    granularity: str = "per_tensor"
    activation_bits: int | None = None
    # "dynamic": scale from each sample's live activation vector;
    # "static": one per-layer scale calibrated at quantization time
    activation_scale: str = "dynamic"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown quant kind {self.kind!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.activation_bits not in (None, 4, 8):
            raise ConfigError(f"activation_bits must be 4, 8 or none, got {self.activation_bits!r}")
        if self.activation_scale not in ("dynamic", "static"):
            raise ConfigError(f"activation_scale must be dynamic or static, got {self.activation_scale!r}")


@dataclass
class QTensor:
    codes: np.ndarray  # uint8 codebook indices (4-bit kinds) or int8 codes
    scale: np.ndarray  # shape () per tensor, (H,) per channel
    format: QuantFormat
    original_shape: tuple

    @property
    def step(self):
        """INT8 quantization step ``scale / 127``."""
        if self.format.kind != "int8":
            raise ConfigError("step is defined for int8 only")
        return self.scale / INT8_MAX


@lru_cache(maxsize=None)
def _codebook(kind: str) -> tuple:
    if kind == "nf4":
        inv = NormalDist().inv_cdf
        pos = [inv(p) for p in np.linspace(NF4_OFFSET, 0.5, 9)[:-1]]
        neg = [-inv(p) for p in np.linspace(NF4_OFFSET, 0.5, 8)[:-1]]
        levels = sorted(pos + [0.0] + neg)
        top = max(abs(v) for v in levels)
        return tuple(v / top for v in levels)
    if kind == "fp4_e2m1":
        # sign-magnitude E2M1: 8 negative slots (-6 .. -0) then 8 positive (+0 .. +6)
        top = _FP4_MAGNITUDES[-1]
        neg = [-m / top for m in reversed(_FP4_MAGNITUDES)]
        return tuple(neg + [m / top for m in _FP4_MAGNITUDES])
    raise ConfigError(f"{kind} has no 16-entry codebook")


def codebook(fmt) -> np.ndarray:
    """The 16 normalized levels of a 4-bit format, ascending, spanning [-1, 1].

    NF4 levels are strictly increasing. FP4 E2M1 carries both -0.0 and +0.0 (slots 7
    and 8); apart from that pair it is strictly increasing too.
    """
    kind = fmt.kind if isinstance(fmt, QuantFormat) else fmt
    return np.array(_codebook(kind))


def _group_scale(x, granularity):
    if granularity == "per_tensor" or x.ndim == 0:
        scale = np.asarray(np.max(np.abs(x)) if x.size else 0.0, dtype=np.float64)
    else:
        axes = tuple(range(x.ndim - 1))
        scale = np.max(np.abs(x), axis=axes) if axes else np.abs(x)
    scale = np.where(scale == 0.0, 1.0, scale)
    return scale


def _nearest(v, levels):
    """Index of the nearest level; exact ties go to the level nearer zero."""
    d = np.abs(v[..., None] - levels)
    best = d.min(axis=-1, keepdims=True)
    key = np.where(d == best, np.abs(levels), np.inf)
    return np.argmin(key, axis=-1)


def quantize_tensor(x, fmt: QuantFormat) -> QTensor:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    scale = _group_scale(x, fmt.granularity)
    v = x / scale
    if fmt.kind == "int8":
        codes = np.clip(np.rint(v * INT8_MAX), -INT8_MAX, INT8_MAX).astype(np.int8)
    else:
        # search in the unnormalized level domain so exact ties stay exact (E2M1 levels are dyadic)
        top = _FP4_MAGNITUDES[-1] if fmt.kind == "fp4_e2m1" else 1.0
        codes = _nearest(v * top, codebook(fmt.kind) * top)
        if fmt.kind == "fp4_e2m1":
            # zero always encodes as +0
            codes = np.where(codes == 7, 8, codes)
        codes = codes.astype(np.uint8)
    return QTensor(codes, np.asarray(scale, dtype=np.float64), fmt, tuple(x.shape))


def dequantize(q: QTensor) -> np.ndarray:
    codes = np.asarray(q.codes)
    if codes.shape != tuple(q.original_shape):
        raise IntegrityError(f"code array shape {codes.shape} != original shape {q.original_shape}")
    if q.format.kind == "int8":
        c = codes.astype(np.int64)
        if c.size and (c.min() < -INT8_MAX or c.max() > INT8_MAX):
            raise IntegrityError("int8 code outside [-127, 127]")
        # code/127 first so the +-127 endpoint reproduces the scale exactly
        return (c / INT8_MAX) * q.scale
    levels = codebook(q.format.kind)
    c = codes.astype(np.int64)
    if c.size and (c.min() < 0 or c.max() >= len(levels)):
        raise IntegrityError("4-bit code index outside [0, 15]")
    return levels[c] * q.scale


def max_roundtrip_error(q: QTensor) -> np.ndarray:
    """Worst-case |x - dequantize(quantize(x))| per scale group."""
    if q.format.kind == "int8":
        return q.scale / INT8_MAX / 2.0
    gaps = np.diff(codebook(q.format.kind))
    return q.scale * gaps.max() / 2.0


def fake_quantize(x, fmt: QuantFormat) -> np.ndarray:
    return dequantize(quantize_tensor(x, fmt))


def fake_quantize_activations(h, bits: int, scale=None) -> np.ndarray:
    """Symmetric uniform quantization with ``2**(bits-1) - 1`` levels per sign.

    Without ``scale`` each row (one sample) uses its own max-abs; a given scale
    also clips values beyond it.
    """
    n = 2 ** (bits - 1) - 1
    if scale is None:
        scale = np.max(np.abs(h), axis=-1, keepdims=True)
    scale = np.where(scale == 0.0, 1.0, scale)
    return (np.clip(np.rint(h / scale * n), -n, n) / n) * scale


def fake_quantize_model(model, fmt: QuantFormat, calibration=None):
    """Copy of ``model`` with every base weight projected onto the format and frozen.

    With ``activation_scale="static"`` the per-layer input scales are the max-abs
    main-path inputs seen on ``calibration`` (a 2-D input array), layer by layer.
    Adapters, if any, are left at full precision.
    """
    from .nn import _quantize_input

    if fmt.activation_bits and fmt.activation_scale == "static" and calibration is None:
        raise ConfigError("static activation quantization needs calibration inputs")
    out = model.copy()
    for layer in out.layers:
        q = quantize_tensor(layer.weight, fmt)
        layer.weight = dequantize(q)
        layer.qweight = q
        layer.quant_spec = fmt
        layer.frozen = True
        layer.act_scale = None
    if fmt.activation_bits and fmt.activation_scale == "static":
        from .nn import _activate

        h = np.asarray(calibration, dtype=np.float64)
        for layer, act in zip(out.layers, out.activations):
            layer.act_scale = float(np.max(np.abs(h))) if h.size else 1.0
            h = _activate(_quantize_input(h, layer) @ layer.weight + layer.bias, act)
    return out
