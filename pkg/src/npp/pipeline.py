"""End-to-end experiment: pretrain, degrade, attach, select, retrain, evaluate, energy."""

from __future__ import annotations

import csv
import logging
import os
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, Standardizer, load_dataset
from .energy import EnergyLedger, network_energy
from .errors import ConfigError, DimensionError, StageError
from .lora import attach_adapters, train_adapters, trainable_fraction
from .nn import init_model
from .quant import fake_quantize_model
from .seeding import substream
from .sensitivity import random_select, rank_and_select, sensitivity_scores, write_scores_csv
from .training import evaluate, train
from .variability import perturb_weights

log = logging.getLogger(__name__)

REPORT_NAME = "report.csv"
SCORES_NAME = "scores.csv"
CHECKPOINT_NAME = "model.npp"


@dataclass
class RunReport:
    baseline_acc: float
    degraded_acc: float
    recovered_acc: float
    trainable_fraction: float
    energy: EnergyLedger
    wall_time: float
    config_hash: str
    rows: list = field(default_factory=list)  # (stage, metric, value) as written to report.csv
    out_dir: Path | None = None


def _seed_int(root, name) -> int:
    return int(substream(root, name).integers(2**63))


def thread_cap() -> int | None:
    """Worker cap from ``NPP_THREADS``; unset means no cap."""
    raw = os.environ.get("NPP_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NPP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"NPP_THREADS must be a positive integer, got {raw!r}")
    return n


def prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    loaded = load_dataset(cfg.dataset.source())
    if isinstance(loaded, tuple):
        train_set, test_set = loaded
        if test_set is None:
            train_set, test_set = train_set.split(cfg.dataset.test_fraction, cfg.dataset.split_seed)
    else:
        train_set, test_set = loaded.split(cfg.dataset.test_fraction, cfg.dataset.split_seed)
    if cfg.dataset.standardize:
        st = Standardizer.fit(train_set.inputs)
        train_set, test_set = st.transform(train_set), st.transform(test_set)
    return train_set, test_set


def pretrain(cfg: ExperimentConfig, train_set: Dataset):
    widths = list(cfg.model.widths)
    if widths[0] != train_set.dim:
        raise DimensionError(f"model input width {widths[0]} != dataset width {train_set.dim}", layer=0)
    if widths[-1] < train_set.num_classes:
        raise DimensionError(f"{widths[-1]} outputs for {train_set.num_classes} classes", layer=len(widths) - 2)
    model = init_model(widths, cfg.model.activation, rng=substream(cfg.seed, "init"))
    train(model, train_set, replace(cfg.pretrain, seed=_seed_int(cfg.seed, "pretrain_shuffle")), mode="float")
    return model


def degrade(cfg: ExperimentConfig, model, train_set: Dataset):
    """Quantize and/or perturb; the result always has a frozen base."""
    out = model.copy()
    out.surrogate_datapath = cfg.surrogate_datapath
    if cfg.quant is not None:
        out = fake_quantize_model(out, cfg.quant, calibration=train_set.inputs)
    if cfg.perturb is not None:
        out = perturb_weights(out, cfg.perturb)
    for layer in out.layers:
        layer.frozen = True
    return out


def select(cfg: ExperimentConfig, model, train_set: Dataset):
    """Retraining subset and, for sensitivity selection, the per-sample scores."""
    sel = cfg.selection
    if sel.mode == "all":
        return train_set, None
    if sel.mode == "sensitivity":
        scores = sensitivity_scores(model, train_set.inputs, train_set.labels)
        ids, _ = rank_and_select(model, train_set, sel.k, scores=scores)
    else:
        rng = np.random.default_rng(sel.seed) if sel.seed is not None else substream(cfg.seed, "selection")
        ids, scores = random_select(train_set, sel.k, rng), None
    pos = {sid: i for i, sid in enumerate(train_set.ids.tolist())}
    return train_set.subset([pos[s] for s in ids.tolist()]), scores


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_report(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["stage", "metric", "value"])
        for stage, metric, value in rows:
            w.writerow([stage, metric, _fmt(value)])


def run_experiment(cfg: ExperimentConfig, out_dir=None, pretrained=None) -> RunReport:
    """Run every stage and write report.csv, scores.csv (sensitivity selection) and model.npp.

    ``pretrained`` short-circuits the pretrain stage with an in-memory float model.
    Any stage failure is re-raised as ``StageError`` after removing this run's outputs.
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    created_dir = not out.exists()
    written: list[Path] = []
    rows = [("config", "hash", cfg.hash()), ("config", "seed", cfg.seed)]
    cap = thread_cap()
    stage = "setup"
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cap):
            stage = "data"
            train_set, test_set = prepare_data(cfg)
            rows += [("data", "train_size", len(train_set)), ("data", "test_size", len(test_set))]

            stage = "pretrain"
            if pretrained is not None:
                base = pretrained.copy()
            elif cfg.model.checkpoint:
                base = load_checkpoint(cfg.model.checkpoint)
            else:
                base = pretrain(cfg, train_set)
            baseline = evaluate(base, test_set, mode="float")
            rows.append(("pretrain", "baseline_acc", baseline))

            stage = "degrade"
            degraded = degrade(cfg, base, train_set)
            degraded_acc = evaluate(degraded, test_set)
            rows.append(("degrade", "degraded_acc", degraded_acc))
            if cfg.quant is not None:
                rows += [
                    ("degrade", "quant_kind", cfg.quant.kind),
                    ("degrade", "activation_bits", cfg.quant.activation_bits or 0),
                ]
            if cfg.perturb is not None:
                # the 3-sigma bound is logged next to sigma; the "30% worst case" reading is not asserted
                rows += [
                    ("degrade", "sigma", cfg.perturb.sigma),
                    ("degrade", "three_sigma_relative_bound", 3.0 * cfg.perturb.sigma),
                ]

            model = degraded
            frac = 0.0
            report_scores = None
            if cfg.adapters is not None:
                stage = "attach"
                model = attach_adapters(degraded, cfg.adapters, seed=cfg.seed)
                frac = trainable_fraction(model)

                stage = "select"
                subset, report_scores = select(cfg, degraded, train_set)
                rows += [("select", "mode", cfg.selection.mode), ("select", "samples", len(subset))]

                stage = "retrain"
                hyper = replace(cfg.hyper, seed=_seed_int(cfg.seed, "adapter_shuffle"))
                rep = train_adapters(model, subset, hyper)
                rows.append(("retrain", "final_train_loss", rep.epoch_losses[-1]))

            stage = "evaluate"
            recovered = evaluate(model, test_set)
            rows += [("evaluate", "recovered_acc", recovered), ("evaluate", "trainable_fraction", frac)]

            stage = "energy"
            ledger = network_energy(model, constants=cfg.energy.constants(), mode=cfg.energy.mode)
            rows += [("energy", k, v) for k, v in ledger.rows()]

            stage = "write"
            out.mkdir(parents=True, exist_ok=True)
            if report_scores is not None:
                written.append(out / SCORES_NAME)
                write_scores_csv(written[-1], train_set, report_scores)
            written.append(out / CHECKPOINT_NAME)
            save_checkpoint(written[-1], model, metadata={"config_hash": cfg.hash()})
            written.append(out / REPORT_NAME)
            write_report(written[-1], rows)
    except Exception as exc:
        for p in written:
            p.unlink(missing_ok=True)
        if created_dir and out.exists():
            shutil.rmtree(out, ignore_errors=True)
        raise StageError(stage, exc) from exc
    wall = time.perf_counter() - t0
    log.info("run finished in %.2fs", wall)
    return RunReport(baseline, degraded_acc, recovered, frac, ledger, wall, cfg.hash(), rows, out)
