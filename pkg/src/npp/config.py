"""Experiment configuration: INI-style sections with a strict schema.

Example::

    [run]
    seed = 3
    out_dir = runs/golden

    [dataset]
    kind = digits
    standardize = true

    [model]
    widths = 784,128,10

    [quant]
    kind = nf4
    activation_bits = 4

    [adapters]
    rank = 4

A missing ``[quant]``, ``[perturb]`` or ``[adapters]`` section disables that stage.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .bfp import parse_datapath
from .energy import EnergyConstants, parse_mode
from .errors import ConfigError
from .lora import AdapterPlan
from .quant import QuantFormat
from .training import TrainHyper
from .variability import PerturbSpec

DATASET_KINDS = ("digits", "synthetic_blobs", "csv", "idx_dir")
SELECTIONS = ("all", "sensitivity", "random")

# shuffle seeds are derived from the run seed, so ``seed`` is not a config key here
PRETRAIN_DEFAULT = TrainHyper(lr=0.01, epochs=20)
ADAPT_DEFAULT = TrainHyper(lr=0.01, epochs=10)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _opt_int(text):
    return None if text.strip().lower() in ("none", "") else int(text)


def _layers(text):
    """``all``, ``last:k`` or a comma list of layer indices."""
    text = text.strip()
    if text in ("all", "all_linear"):
        return "all"
    if text.startswith("last:"):
        return ("last", int(text[5:]))
    return _ints(text)


def _opt_layers(text):
    return None if text.strip() == "all" else _ints(text)


# section -> key -> parser
SCHEMA = {
    "run": {"seed": int, "out_dir": str, "surrogate_datapath": str},
    "dataset": {
        "kind": str,
        "path": str,
        "classes": int,
        "dim": int,
        "n": int,
        "seed": int,
        "test_fraction": float,
        "split_seed": int,
        "standardize": _bool,
    },
    "model": {"widths": _ints, "activation": str, "checkpoint": str},
    "pretrain": {"lr": float, "epochs": int, "batch_size": int, "optimizer": str, "momentum": float},
    "quant": {"kind": str, "granularity": str, "activation_bits": _opt_int, "activation_scale": str},
    "perturb": {"sigma": float, "seed": int, "layers": _opt_layers, "literal": _bool},
    "adapters": {"rank": int, "layers": _layers},
    "selection": {"mode": str, "k": int, "seed": int},
    "hyper": {"lr": float, "epochs": int, "batch_size": int, "optimizer": str, "momentum": float},
    "energy": {"mode": str, "e_cim": float, "e_fp": float, "ops_per_mac": int, "cim_multiplier": float},
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "digits"
    path: str | None = None
    classes: int = 10
    dim: int = 784
    n: int = 1000
    seed: int = 0
    test_fraction: float = 0.25
    split_seed: int = 0
    standardize: bool = False

    def source(self) -> dict:
        src = {"kind": self.kind}
        if self.kind in ("csv", "idx_dir"):
            src["path"] = self.path
        if self.kind == "synthetic_blobs":
            src.update(classes=self.classes, dim=self.dim, n=self.n, seed=self.seed)
        return src


@dataclass(frozen=True)
class ModelSpec:
    widths: tuple = (784, 128, 10)
    activation: str = "relu"
    checkpoint: str | None = None  # load a pretrained model instead of the pretrain stage


@dataclass(frozen=True)
class SelectionSpec:
    mode: str = "all"
    k: int = 1
    seed: int | None = None  # random selection; defaults to a substream of the run seed


@dataclass(frozen=True)
class EnergySpec:
    mode: str = "constants"
    e_cim: float = 2.5e-15
    e_fp: float = 19e-15
    ops_per_mac: int = 2
    cim_multiplier: float = 1.0

    def constants(self) -> EnergyConstants:
        return EnergyConstants(self.e_cim, self.e_fp, self.ops_per_mac, self.cim_multiplier)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "npp_out"
    surrogate_datapath: str = "fp64"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    pretrain: TrainHyper = PRETRAIN_DEFAULT
    quant: QuantFormat | None = None
    perturb: PerturbSpec | None = None
    adapters: AdapterPlan | None = None
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    hyper: TrainHyper = ADAPT_DEFAULT
    energy: EnergySpec = field(default_factory=EnergySpec)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of every resolved field."""
        text = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return repr(obj)  # exact and platform independent
    return obj


def validate(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {ds.kind!r}")
    if ds.kind in ("csv", "idx_dir") and not ds.path:
        raise ConfigError(f"dataset.kind={ds.kind} needs dataset.path")
    if not 0.0 < ds.test_fraction < 1.0:
        raise ConfigError("dataset.test_fraction must lie in (0, 1)")
    if len(cfg.model.widths) < 2 or min(cfg.model.widths) < 1:
        raise ConfigError("model.widths needs at least two positive widths")
    if cfg.model.activation not in ("relu", "gelu"):
        raise ConfigError(f"model.activation must be relu or gelu, got {cfg.model.activation!r}")
    if cfg.selection.mode not in SELECTIONS:
        raise ConfigError(f"selection.mode must be one of {SELECTIONS}")
    if cfg.selection.k < 1:
        raise ConfigError("selection.k must be positive")
    if cfg.selection.mode != "all" and cfg.adapters is None:
        raise ConfigError("sample selection needs an [adapters] section to retrain")
    if cfg.adapters is not None:
        if cfg.adapters.rank < 1:
            raise ConfigError("adapters.rank must be >= 1")
        n_layers = len(cfg.model.widths) - 1
        # same check the model will run, surfaced at parse time
        from .nn import init_model

        cfg.adapters.select(init_model([1] * (n_layers + 1)))
    parse_mode(cfg.energy.mode)
    parse_datapath(cfg.surrogate_datapath)


def _parse_section(parser, name):
    if not parser.has_section(name):
        return None
    out = {}
    schema = SCHEMA[name]
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
    sec = {name: _parse_section(parser, name) for name in SCHEMA}
    kwargs = dict(sec["run"] or {})
    if sec["dataset"] is not None:
        kwargs["dataset"] = DatasetSpec(**sec["dataset"])
    if sec["model"] is not None:
        kwargs["model"] = ModelSpec(**sec["model"])
    if sec["pretrain"] is not None:
        kwargs["pretrain"] = replace(PRETRAIN_DEFAULT, **sec["pretrain"])
    if sec["quant"] is not None:
        kwargs["quant"] = QuantFormat(**sec["quant"])
    if sec["perturb"] is not None:
        if "sigma" not in sec["perturb"]:
            raise ConfigError("[perturb] needs sigma")
        kwargs["perturb"] = PerturbSpec(**sec["perturb"])
    if sec["adapters"] is not None:
        if "rank" not in sec["adapters"]:
            raise ConfigError("[adapters] needs rank")
        kwargs["adapters"] = AdapterPlan(**sec["adapters"])
    if sec["selection"] is not None:
        kwargs["selection"] = SelectionSpec(**sec["selection"])
    if sec["hyper"] is not None:
        kwargs["hyper"] = replace(ADAPT_DEFAULT, **sec["hyper"])
    if sec["energy"] is not None:
        kwargs["energy"] = EnergySpec(**sec["energy"])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
