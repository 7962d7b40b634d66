"""Gradient-magnitude sensitivity scores and per-class sample selection."""

from __future__ import annotations

import csv
import logging

import numpy as np

from .errors import NumericError
from .nn import _backward, _forward, softmax_cross_entropy

log = logging.getLogger(__name__)


def sensitivity_scores(model, inputs, labels, mode=None) -> np.ndarray:
    """Per-sample sum of |dL_i/dw| over every base weight and bias.

    ``L_i`` is the single-sample loss. For a linear layer the per-sample weight
    gradient is the outer product of its input and output delta, so its absolute
    sum factors into ``|x|_1 * |delta|_1``. Samples are scored one at a time so a
    score is bit-identical however the samples are batched.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    out = np.empty(len(labels))
    for start in range(len(labels)):
        sl = slice(start, start + 1)
        logits, caches = _forward(model, inputs[sl], mode)
        losses, dlogits = softmax_cross_entropy(logits, labels[sl])
        if not np.all(np.isfinite(losses)):
            raise NumericError("non-finite loss while scoring")
        dzs, _ = _backward(model, caches, dlogits)
        score = np.zeros(len(losses))
        for (_, hq, _, _), dz in zip(caches, dzs):
            dz_l1 = np.abs(dz).sum(axis=1)
            score += np.abs(hq).sum(axis=1) * dz_l1 + dz_l1
        out[sl] = score
    return out


def sensitivity_score(model, x, y, mode=None) -> float:
    return float(sensitivity_scores(model, x, [y], mode)[0])


def rank_and_select(model, dataset, k_per_class: int, mode=None, scores=None):
    """Top ``k_per_class`` samples of every class by score.

    Returns ``(ids, scores_by_id)``; ``ids`` is ordered by descending score with
    ties broken by ascending sample id.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if k_per_class < 1:
        raise ValueError("k_per_class must be positive")
    if scores is None:
        scores = sensitivity_scores(model, dataset.inputs, dataset.labels, mode)
    chosen = []
    for c in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < k_per_class:
            log.warning("class %d has %d samples, fewer than k=%d; taking all", c, len(members), k_per_class)
        order = np.lexsort((dataset.ids[members], -scores[members]))
        chosen.extend(members[order[:k_per_class]])
    chosen = np.asarray(chosen, dtype=np.int64)
    order = np.lexsort((dataset.ids[chosen], -scores[chosen]))
    chosen = chosen[order]
    return dataset.ids[chosen], dict(zip(dataset.ids.tolist(), scores.tolist()))


def random_select(dataset, k_per_class: int, rng) -> np.ndarray:
    """Uniform random ``k_per_class`` ids per class (classes in ascending order)."""
    chosen = []
    for c in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == c)
        take = min(k_per_class, len(members))
        chosen.extend(members[rng.choice(len(members), size=take, replace=False)])
    return dataset.ids[np.asarray(chosen, dtype=np.int64)]


def write_scores_csv(path, dataset, scores) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "class", "score"])
        for sid, label, s in zip(dataset.ids, dataset.labels, scores):
            w.writerow([int(sid), int(label), format(float(s), ".17g")])
