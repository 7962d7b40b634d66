"""``npp`` command line. Exit codes: 0 success, 1 runtime error, 2 configuration or usage error."""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .cim import BitplaneConfig, crossbar_from_weights, fidelity_report, quantize_inputs
from .config import ExperimentConfig, load_config
from .energy import EnergyConstants, layer_energy
from .errors import ConfigError, NPPError, StageError
from .lora import attach_adapters, train_adapters, trainable_fraction
from .pipeline import _seed_int, degrade, prepare_data, pretrain, run_experiment, select
from .quant import QuantFormat, fake_quantize_model
from .sensitivity import rank_and_select, sensitivity_scores, write_scores_csv
from .training import evaluate
from .variability import PerturbSpec, perturb_weights

log = logging.getLogger("npp")


def _dims(text):
    try:
        d, h = text.lower().split("x")
        return int(d), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DxH, got {text!r}") from None


def _layer_list(text):
    if text == "all":
        return None
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'all' or comma-separated indices, got {text!r}") from None


def _add_perturb_flags(p):
    p.add_argument("--sigma", type=float, help="relative std of the multiplicative weight noise")
    p.add_argument("--perturb-seed", type=int, default=None)
    p.add_argument("--perturb-layers", type=_layer_list, default=None, help="'all' or e.g. 0,2")


def _perturb_override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.sigma is None:
        if args.perturb_seed is not None or args.perturb_layers is not None:
            raise ConfigError("--perturb-seed/--perturb-layers need --sigma")
        return cfg
    base = cfg.perturb or PerturbSpec(args.sigma)
    spec = replace(
        base,
        sigma=args.sigma,
        seed=base.seed if args.perturb_seed is None else args.perturb_seed,
        layers=base.layers if args.perturb_layers is None else args.perturb_layers,
    )
    return replace(cfg, perturb=spec)


def _output(path):
    return open(path, "w", newline="", encoding="utf-8") if path else contextlib.nullcontext(sys.stdout)


def _write_rows(rows, out):
    csv.writer(out, lineterminator="\n").writerows(rows)


def cmd_run(args):
    cfg = load_config(args.config)
    if args.surrogate_datapath:
        cfg = replace(cfg, surrogate_datapath=args.surrogate_datapath)
    cfg = _perturb_override(cfg, args)
    rep = run_experiment(cfg, out_dir=args.out_dir)
    print(f"baseline_acc={rep.baseline_acc!r}")
    print(f"degraded_acc={rep.degraded_acc!r}")
    print(f"recovered_acc={rep.recovered_acc!r}")
    print(f"trainable_fraction={rep.trainable_fraction!r}")
    print(f"tops_per_watt={rep.energy.tops_per_watt!r}")
    print(f"config_hash={rep.config_hash}")
    print(f"wall_time={rep.wall_time:.3f}")
    print(f"outputs={rep.out_dir}")


def cmd_pretrain(args):
    cfg = load_config(args.config)
    train_set, test_set = prepare_data(cfg)
    model = pretrain(cfg, train_set)
    acc = evaluate(model, test_set, mode="float")
    save_checkpoint(args.out, model, metadata={"config_hash": cfg.hash(), "baseline_acc": acc})
    print(f"baseline_acc={acc!r}")


def cmd_quantize(args):
    model = load_checkpoint(args.checkpoint)
    fmt = QuantFormat(args.kind, args.granularity, args.activation_bits, args.activation_scale)
    calibration = None
    if args.config:
        calibration = prepare_data(load_config(args.config))[0].inputs
    save_checkpoint(args.out, fake_quantize_model(model, fmt, calibration=calibration))


def cmd_perturb(args):
    model = load_checkpoint(args.checkpoint)
    spec = PerturbSpec(args.sigma, args.perturb_seed or 0, args.perturb_layers, args.literal)
    save_checkpoint(args.out, perturb_weights(model, spec))


def cmd_adapt(args):
    """Attach, select and retrain on an already degraded checkpoint, per the config."""
    cfg = load_config(args.config)
    if cfg.adapters is None:
        raise ConfigError("config has no [adapters] section")
    train_set, test_set = prepare_data(cfg)
    degraded = load_checkpoint(args.checkpoint)
    before = evaluate(degraded, test_set)
    model = attach_adapters(degraded, cfg.adapters, seed=cfg.seed)
    subset, _ = select(cfg, degraded, train_set)
    train_adapters(model, subset, replace(cfg.hyper, seed=_seed_int(cfg.seed, "adapter_shuffle")))
    save_checkpoint(args.out, model)
    print(f"degraded_acc={before!r}")
    print(f"recovered_acc={evaluate(model, test_set)!r}")
    print(f"trainable_fraction={trainable_fraction(model)!r}")


def cmd_select(args):
    cfg = load_config(args.config)
    train_set, _ = prepare_data(cfg)
    model = load_checkpoint(args.checkpoint)
    scores = sensitivity_scores(model, train_set.inputs, train_set.labels)
    ids, _ = rank_and_select(model, train_set, args.k, scores=scores)
    if args.scores:
        write_scores_csv(args.scores, train_set, scores)
    print(",".join(str(i) for i in ids.tolist()))


def cmd_cim_eval(args):
    d, h = args.dims
    cfg = BitplaneConfig(
        weight_bits=args.weight_bits,
        input_bits=args.input_bits,
        comparator=args.comparator,
        threshold=args.threshold,
        comparator_sigma=args.comparator_sigma,
        array_cols=max(1024, d),
    )
    rows = [("trial", "nrmse", "bit_flip_rate", "nrmse_defined", "nrmse_vs_noiseless")]
    for t in range(args.trials):
        rng = np.random.default_rng([args.seed, t])
        layer, _ = crossbar_from_weights(rng.standard_normal((d, h)), replace(cfg, seed=args.seed + t))
        x, _ = quantize_inputs(rng.random((args.samples, d)), cfg.input_bits)
        rep = fidelity_report(layer, x, replace(cfg, seed=args.seed + t))
        rows.append(
            (t, repr(rep.nrmse), repr(rep.bit_flip_rate), str(rep.nrmse_defined).lower(), repr(rep.nrmse_vs_noiseless))
        )
    with _output(args.out) as f:
        _write_rows(rows, f)


def cmd_energy(args):
    d, h = args.dims
    constants = EnergyConstants(args.e_cim, args.e_fp, args.ops_per_mac, args.cim_multiplier)
    ledger = layer_energy(d, h, args.rank, constants, args.mode)
    rows = [("metric", "value")] + [(k, repr(v) if isinstance(v, float) else v) for k, v in ledger.rows()]
    rows.append(("trainable_fraction", repr(args.rank * (d + h) / (d * h))))
    with _output(args.out) as f:
        _write_rows(rows, f)


def cmd_report(args):
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.csv"
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        width = max(len(r[0]) + len(r[1]) for r in rows) + 2
        for stage, metric, value in rows[1:]:
            print(f"{stage + '.' + metric:<{width}} {value}")
        return
    header = read_header(path)
    print(f"format={header['format']}")
    for i, spec in enumerate(header["layers"]):
        q = spec["quant_spec"]["kind"] if spec["quant_spec"] else "float"
        print(f"layer {i}: {spec['in_dim']}x{spec['out_dim']} {spec['activation']} {q} frozen={spec['frozen']}")
    for b in header["blocks"]:
        print(f"  {b['name']:<22} {b['dtype']:<3} {b['shape']}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npp", description="Precision-polarized inference simulator.")
    p.add_argument("--version", action="version", version=f"npp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default=None, help="overrides [run] out_dir")
    s.add_argument("--surrogate-datapath", default=None, help="fp64 or bfp:M")
    _add_perturb_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("pretrain", help="float pretraining, writes a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("quantize", help="fake-quantize a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=["int8", "fp4_e2m1", "nf4"], default="nf4")
    s.add_argument("--granularity", choices=["per_tensor", "per_channel"], default="per_tensor")
    s.add_argument("--activation-bits", type=int, choices=[4, 8], default=None)
    s.add_argument("--activation-scale", choices=["dynamic", "static"], default="dynamic")
    s.add_argument("--config", default=None, help="dataset for static activation calibration")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("perturb", help="multiplicative Gaussian weight noise")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--perturb-seed", type=int, default=0)
    s.add_argument("--perturb-layers", type=_layer_list, default=None)
    s.add_argument("--literal", action="store_true", help="w + w(1+n) instead of w(1+n)")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("adapt", help="attach and train adapters on a degraded checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("select", help="sensitivity-rank the training set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--k", type=int, default=1, help="samples per class")
    s.add_argument("--scores", default=None, help="write all scores to this CSV")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("cim-eval", help="bitplane crossbar fidelity on random layers")
    s.add_argument("--weight-bits", type=int, default=8)
    s.add_argument("--input-bits", type=int, default=8)
    s.add_argument("--comparator", choices=["exact", "majority", "threshold"], default="majority")
    s.add_argument("--threshold", type=int, default=0)
    s.add_argument("--comparator-sigma", type=float, default=0.0)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--dims", type=_dims, default=(64, 16))
    s.add_argument("--samples", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_cim_eval)

    s = sub.add_parser("energy", help="energy ledger for one layer")
    s.add_argument("--dims", type=_dims, required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--mode", default="constants", help="constants or fraction=<f>")
    s.add_argument("--e-cim", type=float, default=2.5e-15)
    s.add_argument("--e-fp", type=float, default=19e-15)
    s.add_argument("--ops-per-mac", type=int, default=2)
    s.add_argument("--cim-multiplier", type=float, default=1.0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("report", help="print a run's report.csv or a checkpoint header")
    s.add_argument("path")
    s.set_defaults(func=cmd_report)
    return p


def _is_config_error(exc) -> bool:
    return isinstance(exc, ConfigError) or (isinstance(exc, StageError) and isinstance(exc.cause, ConfigError))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        print(f"npp {args.command}: error: {exc}", file=sys.stderr)
        if _is_config_error(exc):
            return 2
        if not isinstance(exc, (NPPError, OSError, ValueError, ArithmeticError)):
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
