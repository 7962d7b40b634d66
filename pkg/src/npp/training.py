"""SGD training loop and accuracy evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import Batch, DenseModel, _forward, loss_and_grads, softmax_cross_entropy

EVAL_CHUNK = 512


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd_momentum"  # or "sgd"
    momentum: float = 0.9

    def __post_init__(self):
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    final_accuracy: float = float("nan")
    eval_accuracy: float | None = None
    steps: int = 0


def _set_param(model: DenseModel, name: str):
    parts = name.split(".")
    layer = model.layers[int(parts[1])]
    if parts[2] == "adapter":
        return layer.adapter, parts[3]
    return layer, parts[2]


def dataset_loss(model: DenseModel, data, mode=None) -> float:
    total = 0.0
    for start in range(0, len(data), EVAL_CHUNK):
        x = data.inputs[start : start + EVAL_CHUNK]
        logits, _ = _forward(model, x, mode)
        losses, _ = softmax_cross_entropy(logits, data.labels[start : start + EVAL_CHUNK])
        total += float(losses.sum())
    return total / len(data)


def train(model: DenseModel, data, hyper: TrainHyper, eval_data=None, mode=None) -> TrainReport:
    """Train every non-frozen parameter (adapters included) in place.

    The recorded loss per epoch is the full-dataset loss after that epoch, in fixed order.
    """
    if not model.trainable_parameters():
        raise ConfigError("model has no trainable parameters")
    if len(data) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(hyper.seed)
    velocity = {}
    report = TrainReport()
    use_momentum = hyper.optimizer == "sgd_momentum"
    for _ in range(hyper.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            batch = Batch(data.inputs[idx], data.labels[idx], data.ids[idx])
            _, grads = loss_and_grads(model, batch, mode=mode)
            for name, g in grads.items():
                owner, attr = _set_param(model, name)
                if use_momentum:
                    v = velocity.get(name)
                    v = g.copy() if v is None else hyper.momentum * v + g
                    velocity[name] = v
                    step = v
                else:
                    step = g
                setattr(owner, attr, getattr(owner, attr) - hyper.lr * step)
            report.steps += 1
        report.epoch_losses.append(dataset_loss(model, data, mode))
    if not report.epoch_losses:
        report.epoch_losses.append(dataset_loss(model, data, mode))
    report.final_accuracy = evaluate(model, data, mode)
    if eval_data is not None:
        report.eval_accuracy = evaluate(model, eval_data, mode)
    return report


def predict(model: DenseModel, inputs, mode=None) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    out = []
    for start in range(0, len(inputs), EVAL_CHUNK):
        logits, _ = _forward(model, inputs[start : start + EVAL_CHUNK], mode)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: DenseModel, data, mode=None) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    correct = int(np.count_nonzero(predict(model, data.inputs, mode) == data.labels))
    return correct / len(data)
