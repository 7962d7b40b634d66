"""Analytical MAC and energy accounting for a layer split into a CIM main path and a surrogate path."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

E_CIM = 2.5e-15  # J per main-path MAC, 8-bit bitplane crossbar
E_FP = 19e-15  # J per surrogate MAC, FP32 digital datapath


@dataclass(frozen=True)
class EnergyConstants:
    e_cim: float = E_CIM
    e_fp: float = E_FP
    ops_per_mac: int = 2
    cim_multiplier: float = 1.0  # sensitivity knob; the CIM figure is quoted for 8-bit only

    def __post_init__(self):
        if self.e_cim <= 0 or self.e_fp <= 0 or self.ops_per_mac <= 0 or self.cim_multiplier <= 0:
            raise ConfigError("energy constants must be positive")


@dataclass
class EnergyLedger:
    macs_main: int = 0
    macs_surrogate: int = 0
    energy_main: float = 0.0
    energy_surrogate: float = 0.0
    ops_per_mac: int = 2
    layers: list = field(default_factory=list)

    @property
    def energy_total(self) -> float:
        return self.energy_main + self.energy_surrogate

    @property
    def surrogate_energy_share(self) -> float:
        return self.energy_surrogate / self.energy_total

    @property
    def tops_per_watt(self) -> float:
        # ops per joule == ops/s per watt
        return self.ops_per_mac * (self.macs_main + self.macs_surrogate) / self.energy_total / 1e12

    def __add__(self, other: EnergyLedger) -> EnergyLedger:
        if self.ops_per_mac != other.ops_per_mac:
            raise ConfigError("cannot add ledgers with different ops_per_mac")
        return EnergyLedger(
            self.macs_main + other.macs_main,
            self.macs_surrogate + other.macs_surrogate,
            self.energy_main + other.energy_main,
            self.energy_surrogate + other.energy_surrogate,
            self.ops_per_mac,
            self.layers + other.layers,
        )

    def rows(self):
        """``(metric, value)`` pairs for CSV emission."""
        return [
            ("macs_main", self.macs_main),
            ("macs_surrogate", self.macs_surrogate),
            ("energy_main_J", self.energy_main),
            ("energy_surrogate_J", self.energy_surrogate),
            ("surrogate_energy_share", self.surrogate_energy_share),
            ("tops_per_watt", self.tops_per_watt),
        ]


def parse_mode(text: str):
    """``"constants"`` or ``"fraction=<f>"``."""
    if text == "constants":
        return ("constants", None)
    if text.startswith("fraction="):
        return ("fraction", float(text.split("=", 1)[1]))
    raise ConfigError(f"energy mode must be 'constants' or 'fraction=<f>', got {text!r}")


def layer_energy(D: int, H: int, r: int, constants=EnergyConstants(), mode="constants") -> EnergyLedger:
    """Ledger for one ``D x H`` layer with a rank-``r`` surrogate.

    ``mode="fraction=f"`` pins the surrogate to share ``f`` of the total energy
    instead of pricing its ``r(D+H)`` MACs at ``e_fp``.
    """
    kind, f = parse_mode(mode) if isinstance(mode, str) else mode
    if D < 1 or H < 1 or r < 0:
        raise ConfigError("need D, H >= 1 and r >= 0")
    macs_main = D * H
    macs_sur = r * (D + H)
    e_main = macs_main * constants.e_cim * constants.cim_multiplier
    if kind == "constants":
        e_sur = macs_sur * constants.e_fp
    else:
        if not 0.0 < f < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {f}")
        # a layer without a surrogate has nothing to pin
        e_sur = e_main * f / (1.0 - f) if r > 0 else 0.0
    ledger = EnergyLedger(macs_main, macs_sur, e_main, e_sur, constants.ops_per_mac)
    ledger.layers = [{"D": D, "H": H, "r": r, "energy_main": e_main, "energy_surrogate": e_sur}]
    return ledger


def network_energy(model, plan=None, constants=EnergyConstants(), mode="constants") -> EnergyLedger:
    """Sum of per-layer ledgers, breakdown in ``ledger.layers``.

    Ranks come from ``plan`` when given, otherwise from the attached adapters.
    """
    selected = set(plan.select(model)) if plan is not None else None
    total = None
    for i, layer in enumerate(model.layers):
        if selected is not None:
            r = plan.rank if i in selected else 0
        else:
            r = layer.adapter.rank if layer.adapter is not None else 0
        led = layer_energy(layer.in_dim, layer.out_dim, r, constants, mode)
        total = led if total is None else total + led
    return total
