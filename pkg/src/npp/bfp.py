"""Block-floating-point dot products with explicit exponent alignment.

Each nonzero element is split as ``m * 2**e`` with ``|m|`` in [1, 2), so a product
mantissa lies in [1, 4). Mantissas are carried as exact Python integers;
the only rounding is the truncation to ``mantissa_bits`` after alignment and the
final conversion back to a float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

_FRAC = 52  # fraction bits of a normalized FP64 mantissa
_PROD_FRAC = 2 * _FRAC


@dataclass(frozen=True)
class BfpConfig:
    mantissa_bits: int = 24

    def __post_init__(self):
        if not 4 <= self.mantissa_bits <= 52:
            raise ConfigError(f"mantissa_bits must be in [4, 52], got {self.mantissa_bits}")


def parse_datapath(text: str):
    """``"fp64"`` -> None, ``"bfp:M"`` -> ``BfpConfig(M)``."""
    if text == "fp64":
        return None
    if text.startswith("bfp:"):
        try:
            return BfpConfig(int(text[4:]))
        except ValueError:
            raise ConfigError(f"bad surrogate datapath {text!r}") from None
    raise ConfigError(f"surrogate datapath must be fp64 or bfp:<M>, got {text!r}")


def _split(v: float):
    """Integer mantissa ``|q|`` in [2**52, 2**53) and exponent with ``v == q * 2**(e - 52)``."""
    m, e = math.frexp(v)
    return int(m * (1 << (_FRAC + 1))), e - 1


def bfp_dot(x, w, cfg: BfpConfig) -> float:
    x = [float(v) for v in np.ravel(x)]
    w = [float(v) for v in np.ravel(w)]
    if len(x) != len(w):
        raise DimensionError(f"length mismatch {len(x)} vs {len(w)}")
    if not all(math.isfinite(v) for v in x + w):
        raise ValueError("bfp_dot needs finite inputs")
    M = cfg.mantissa_bits
    # (1) exponent addition and exact mantissa products
    prods = []
    for a, b in zip(x, w):
        if a == 0.0 or b == 0.0:
            continue
        ma, ea = _split(a)
        mb, eb = _split(b)
        prods.append((ma * mb, ea + eb))
    if not prods:
        return 0.0
    # (2) largest exponent
    e_max = max(e for _, e in prods)
    acc = 0
    for p, e in prods:
        # (3)+(4) align to e_max and keep M fractional bits, truncating toward zero
        drop = _PROD_FRAC + (e_max - e) - M
        mag = abs(p) >> drop if drop >= 0 else abs(p) << -drop
        # (5) fixed-point accumulation
        acc += mag if p > 0 else -mag
    # (6) renormalize
    return math.ldexp(float(acc), e_max - M)


def bfp_matvec(x, W, cfg: BfpConfig) -> np.ndarray:
    """``x @ W`` with one shared exponent per output column."""
    x = np.asarray(x, dtype=np.float64).ravel()
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != x.size:
        raise DimensionError(f"cannot multiply vector of length {x.size} by {W.shape}")
    return np.array([bfp_dot(x, W[:, h], cfg) for h in range(W.shape[1])])


def bfp_matmul(X, W, cfg: BfpConfig) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return bfp_matvec(X, W, cfg)
    return np.stack([bfp_matvec(row, W, cfg) for row in X]) if len(X) else np.zeros((0, W.shape[1]))
