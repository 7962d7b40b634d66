"""Functional simulator of a bitplane-wise separable SRAM compute-in-memory crossbar.

Rows hold the weights of one output; inputs are applied column-wise one bitplane
at a time. Each (input plane, weight plane) pair is one cycle: cells AND their
bits, the sumline collects the popcount, and a comparator reduces it to a single
bit. Signed weights sit on two rails (positive- and negative-weight columns)
that are compared separately and subtracted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

COMPARATORS = ("exact", "majority", "threshold")
MAX_BITS = 16


@dataclass(frozen=True)
class BitplaneConfig:
    weight_bits: int = 8
    input_bits: int = 8
    comparator: str = "majority"
    threshold: int = 0  # T, used by the threshold comparator
    comparator_sigma: float = 0.0  # jitter std in column counts
    array_cols: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.weight_bits <= MAX_BITS and 1 <= self.input_bits <= MAX_BITS):
            raise ConfigError(f"bit widths must be in [1, {MAX_BITS}]")
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}")
        if self.array_cols < 1:
            raise ConfigError("array_cols must be positive")
        if not 0 <= self.threshold <= self.array_cols:
            raise ConfigError(f"threshold {self.threshold} outside [0, {self.array_cols}]")
        if not self.comparator_sigma >= 0:
            raise ConfigError("comparator_sigma must be >= 0")

    @property
    def cycles(self) -> int:
        return self.input_bits * self.weight_bits


@dataclass
class CrossbarLayer:
    codes: np.ndarray  # D x H unsigned magnitudes
    signs: np.ndarray  # D x H, +1 / -1
    config: BitplaneConfig

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.signs = np.where(np.asarray(self.signs) < 0, -1, 1).astype(np.int64)
        if self.codes.shape != self.signs.shape or self.codes.ndim != 2:
            raise DimensionError("codes and signs must be matching D x H arrays")
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= 2**self.config.weight_bits):
            raise ConfigError(f"weight codes must lie in [0, 2^{self.config.weight_bits})")
        if self.codes.shape[0] > self.config.array_cols:
            raise DimensionError(f"{self.codes.shape[0]} inputs exceed {self.config.array_cols} array columns")

    @property
    def signed_codes(self) -> np.ndarray:
        return self.codes * self.signs


def crossbar_from_weights(weight, config: BitplaneConfig) -> tuple[CrossbarLayer, float]:
    """Sign-magnitude symmetric quantization of a real ``D x H`` matrix; returns the layer and its scale."""
    weight = np.asarray(weight, dtype=np.float64)
    top = np.max(np.abs(weight)) if weight.size else 0.0
    top = top if top > 0 else 1.0
    levels = 2**config.weight_bits - 1
    codes = np.rint(np.abs(weight) / top * levels).astype(np.int64)
    return CrossbarLayer(codes, np.sign(weight), config), top / levels


def quantize_inputs(x, input_bits: int) -> tuple[np.ndarray, float]:
    """Unsigned input codes for non-negative activations, with their scale."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and x.min() < 0:
        raise ValueError("crossbar inputs must be non-negative")
    top = np.max(x) if x.size else 0.0
    top = top if top > 0 else 1.0
    levels = 2**input_bits - 1
    return np.rint(x / top * levels).astype(np.int64), top / levels


def bitplane_decompose(codes, nbits: int) -> list[np.ndarray]:
    """Bitplanes of unsigned codes, least significant first."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= 2**nbits):
        raise ValueError(f"codes must lie in [0, 2^{nbits})")
    return [((codes >> i) & 1).astype(np.int64) for i in range(nbits)]


def _compare(s, active, cfg: BitplaneConfig, jitter):
    if cfg.comparator == "exact":
        return s
    if cfg.comparator == "majority":
        ref = np.ceil(active / 2.0)
    else:
        ref = np.full(np.shape(s), float(cfg.threshold))
    bit = s >= ref + jitter
    # no active column: neither rail discharges, read as 0
    return np.where(active > 0, bit, False).astype(np.int64)


def row_compare(w_plane, x_plane, cfg: BitplaneConfig, jitter=0.0) -> int:
    """One row, one cycle: popcount of ``w AND x`` reduced by the comparator."""
    w_plane = np.asarray(w_plane, dtype=np.int64)
    x_plane = np.asarray(x_plane, dtype=np.int64)
    if w_plane.shape != x_plane.shape:
        raise DimensionError("weight and input planes differ in length")
    s = int(np.sum(w_plane & x_plane))
    active = int(np.sum(x_plane))
    return int(_compare(np.asarray(s), np.asarray(active), cfg, jitter))


def comparator_jitter(seed: int, row: int, cycle: int, rail: int, sigma: float) -> float:
    """Frozen threshold jitter for one comparator; a pure function of its arguments."""
    if sigma == 0:
        return 0.0
    table = np.random.default_rng([seed, row]).standard_normal((MAX_BITS * MAX_BITS, 2))
    return float(table[cycle, rail] * sigma)


def _jitter_table(cfg: BitplaneConfig, rows: int) -> np.ndarray:
    """``rows x cycles x 2`` jitter; row ``r`` uses the same draws as ``comparator_jitter``."""
    if cfg.comparator_sigma == 0 or cfg.comparator == "exact":
        return np.zeros((rows, cfg.cycles, 2))
    out = np.empty((rows, cfg.cycles, 2))
    for r in range(rows):
        table = np.random.default_rng([cfg.seed, r]).standard_normal((MAX_BITS * MAX_BITS, 2))
        out[r] = table[: cfg.cycles]
    return out * cfg.comparator_sigma


def crossbar_forward(layer: CrossbarLayer, x_codes, cfg: BitplaneConfig | None = None, return_bits=False):
    """Integer outputs ``y`` (``N x H``, or ``H`` for a single vector) and the cycle count.

    ``y = sum_ij 2^(i+j) (out_pos(i,j) - out_neg(i,j))`` with input plane ``i`` and
    weight plane ``j``. With the exact comparator this is the signed integer GEMM.
    ``return_bits`` adds the comparator outputs, shape ``N x H x cycles x 2``.
    """
    cfg = cfg or layer.config
    x = np.asarray(x_codes, dtype=np.int64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    D, H = layer.codes.shape
    if x.shape[1] != D:
        raise DimensionError(f"input length {x.shape[1]} != crossbar columns {D}")
    if layer.codes.size and layer.codes.max() >= 2**cfg.weight_bits:
        raise ConfigError("weight codes exceed cfg.weight_bits")
    xplanes = bitplane_decompose(x, cfg.input_bits)
    wplanes = bitplane_decompose(layer.codes, cfg.weight_bits)
    rails = [(layer.signs > 0).astype(np.int64), (layer.signs < 0).astype(np.int64)]
    jitter = _jitter_table(cfg, H)
    y = np.zeros((x.shape[0], H), dtype=np.int64)
    bits = np.zeros((x.shape[0], H, cfg.cycles, 2), dtype=np.int64) if return_bits else None
    for i, xp in enumerate(xplanes):
        active = [xp @ rail for rail in rails]
        for j, wp in enumerate(wplanes):
            cycle = i * cfg.weight_bits + j
            outs = []
            for k, rail in enumerate(rails):
                s = xp @ (wp * rail)
                outs.append(_compare(s, active[k], cfg, jitter[:, cycle, k]))
                if return_bits:
                    bits[:, :, cycle, k] = outs[-1]
            y += (outs[0] - outs[1]) << (i + j)
    if single:
        y = y[0]
        if return_bits:
            bits = bits[0]
    if return_bits:
        return y, cfg.cycles, bits
    return y, cfg.cycles


@dataclass
class FidelityReport:
    nrmse: float  # approximate vs exact-comparator output
    bit_flip_rate: float
    nrmse_defined: bool = True
    # approximate vs the same comparator without jitter: the variability share alone
    nrmse_vs_noiseless: float = 0.0


def fidelity_report(layer: CrossbarLayer, inputs, cfg: BitplaneConfig) -> FidelityReport:
    """Approximate outputs against the exact comparator, and comparator flips caused by jitter."""
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.size == 0:
        raise ValueError("empty input set")
    exact_cfg = BitplaneConfig(cfg.weight_bits, cfg.input_bits, "exact", array_cols=cfg.array_cols)
    y_exact, _ = crossbar_forward(layer, inputs, exact_cfg)
    y, _, bits = crossbar_forward(layer, inputs, cfg, return_bits=True)
    calm = BitplaneConfig(
        cfg.weight_bits, cfg.input_bits, cfg.comparator, cfg.threshold, 0.0, cfg.array_cols, cfg.seed
    )
    y0, _, bits0 = crossbar_forward(layer, inputs, calm, return_bits=True)
    flip = float(np.mean(bits != bits0))
    rms = np.sqrt(np.mean(y_exact.astype(np.float64) ** 2))
    rms0 = np.sqrt(np.mean(y0.astype(np.float64) ** 2))
    drift = np.sqrt(np.mean((y - y0).astype(np.float64) ** 2))
    drift = float(drift / rms0) if rms0 > 0 else (0.0 if drift == 0 else float("inf"))
    if rms == 0:
        return FidelityReport(float("nan"), flip, nrmse_defined=False, nrmse_vs_noiseless=drift)
    err = np.sqrt(np.mean((y - y_exact).astype(np.float64) ** 2))
    return FidelityReport(float(err / rms), flip, nrmse_vs_noiseless=drift)
