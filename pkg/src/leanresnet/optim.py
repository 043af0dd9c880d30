"""ADAM, the step learning-rate schedule, and epoch-level train/eval loops."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from leanresnet.data import LabeledImages, augment
from leanresnet.network import NetworkWeights, net_backward, net_loss, save_checkpoint

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class TrainPlan:
    epochs: int = 300
    batch_size: int = 100
    lr0: float = 0.1
    decay_factor: float = 0.5
    decay_every: int = 75
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs, batch_size and decay_every must be positive")
        if self.lr0 < 0 or self.decay_factor <= 0:
            raise ValueError("lr0 must be >= 0 and decay_factor > 0")


def lr_at_epoch(plan: TrainPlan, epoch: int) -> float:
    if not 0 <= epoch < plan.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {plan.epochs})")
    return plan.lr0 * plan.decay_factor ** (epoch // plan.decay_every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """Apply one bias-corrected ADAM update in place.

    ``params`` is an iterable of ``(name, array)``; ``grads`` maps the same
    names to gradients. Raises before touching anything if a gradient is not
    finite.
    """
    params = list(params)
    for name, arr in params:
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, arr in params:
        g = grads[name].astype(np.float64)
        m = state.first_moment.setdefault(name, np.zeros(arr.shape))
        v = state.second_moment.setdefault(name, np.zeros(arr.shape))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr != 0:
            arr -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(arr.dtype)


def train_epoch(weights: NetworkWeights, state: AdamState, data: LabeledImages, plan: TrainPlan,
                epoch: int, rng: np.random.Generator):
    """One pass over shuffled minibatches; returns ``(mean loss, accuracy)``."""
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    lr = lr_at_epoch(plan, epoch)
    order = rng.permutation(n)
    total_loss = 0.0
    total_correct = 0.0
    for b0 in range(0, n, plan.batch_size):
        idx = order[b0:b0 + plan.batch_size]
        x = augment(data.images[idx], rng, enabled=plan.augment)
        loss, acc, cache = net_loss(weights, x, data.labels[idx], mode="train")
        grads = net_backward(weights, cache)
        adam_step(weights.named_parameters(), grads, state, lr)
        total_loss += loss * len(idx)
        total_correct += acc * len(idx)
    return total_loss / n, total_correct / n


def evaluate(weights: NetworkWeights, data: LabeledImages, batch_size: int = 100):
    """Eval-mode loss and accuracy over the whole dataset."""
    n = len(data)
    total_loss = 0.0
    total_correct = 0.0
    for b0 in range(0, n, batch_size):
        sl = slice(b0, b0 + batch_size)
        loss, acc, _ = net_loss(weights, data.images[sl], data.labels[sl], mode="eval")
        m = len(data.labels[sl])
        total_loss += loss * m
        total_correct += acc * m
    return total_loss / n, total_correct / n


def fit(weights, train: LabeledImages, val: LabeledImages | None, plan: TrainPlan,
        metrics_out=None, checkpoint_dir=None, checkpoint_every: int = 0, rng=None):
    """Run ``plan.epochs`` epochs, writing one metric row per epoch to ``metrics_out``.

    Returns the list of metric rows (dicts). Checkpoints go to
    ``checkpoint_dir/epoch_XXXX.lrn`` every ``checkpoint_every`` epochs.
    """
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    state = AdamState()
    writer = None
    if metrics_out is not None:
        writer = csv.writer(metrics_out, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
    rows = []
    for epoch in range(plan.epochs):
        train_loss, train_acc = train_epoch(weights, state, train, plan, epoch, rng)
        val_loss, val_acc = evaluate(weights, val, plan.batch_size) if val is not None else (float("nan"),) * 2
        row = dict(zip(METRIC_FIELDS, (epoch, lr_at_epoch(plan, epoch), train_loss, train_acc, val_loss, val_acc)))
        rows.append(row)
        log.info("epoch %d lr %g loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                 epoch, row["lr"], train_loss, train_acc, val_loss, val_acc)
        if writer is not None:
            writer.writerow([repr(v) for v in row.values()])
            metrics_out.flush()
        if checkpoint_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.lrn", weights)
    return rows
