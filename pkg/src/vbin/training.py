"""Seeded mini-batch NLL training with early stopping and history logging."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .datamodel import LK, LabeledSample
from .model import (DEFAULT_HIDDEN, PARAMETER_CLASSES, logits_for)

log = logging.getLogger("vbin.training")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.2
    balance_classes: bool = True
    hidden_size: int = DEFAULT_HIDDEN
    model: str = "vbin"

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.patience <= 0:
            raise ValueError("epochs, batch_size and patience must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.model not in PARAMETER_CLASSES:
            raise ValueError(f"unknown model kind {self.model!r}")

    def as_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "seed": self.seed,
                "patience": self.patience, "val_fraction": self.val_fraction,
                "balance_classes": self.balance_classes,
                "hidden_size": self.hidden_size, "model": self.model}


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    val_nll: float


@dataclass
class TrainResult:
    params: object
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_nll: float = math.inf


def split_by_scene(samples: list[LabeledSample], fraction: float,
                   seed: int) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Split into (rest, held-out) by whole scenes; both sides non-empty
    whenever at least two scenes exist."""
    scene_ids = sorted({s.scene_id for s in samples})
    rng = np.random.default_rng(seed)
    order = [scene_ids[i] for i in rng.permutation(len(scene_ids))]
    n_hold = int(round(fraction * len(scene_ids)))
    n_hold = min(max(n_hold, 1), max(len(scene_ids) - 1, 1))
    held = set(order[:n_hold])
    a = [s for s in samples if s.scene_id not in held]
    b = [s for s in samples if s.scene_id in held]
    return a, b


def _split_for_validation(samples, config):
    scene_ids = {s.scene_id for s in samples}
    if len(scene_ids) >= 2:
        return split_by_scene(samples, config.val_fraction, config.seed)
    # single-scene dataset: fall back to splitting by event
    log.warning("single scene in dataset; validation split falls back to "
                "event groups")
    events = sorted({s.event_key() for s in samples})
    rng = np.random.default_rng(config.seed)
    order = [events[i] for i in rng.permutation(len(events))]
    n_hold = min(max(int(round(config.val_fraction * len(events))), 1),
                 max(len(events) - 1, 1))
    held = set(order[:n_hold])
    train = [s for s in samples if s.event_key() not in held]
    val = [s for s in samples if s.event_key() in held]
    if not train or not val:       # single event: last resort index split
        cut = max(1, int(len(samples) * (1.0 - config.val_fraction)))
        train, val = samples[:cut], samples[cut:] or samples[:1]
    return train, val


def _balance_lane_keeps(samples, rng):
    """Down-sample LK-labeled samples to the lane-change count."""
    lk_idx = [i for i, s in enumerate(samples) if s.label == LK]
    n_lc = len(samples) - len(lk_idx)
    if n_lc == 0 or len(lk_idx) <= n_lc:
        return list(samples)
    keep = set(rng.choice(len(lk_idx), size=n_lc, replace=False).tolist())
    kept = [i for k, i in enumerate(lk_idx) if k in keep]
    chosen = sorted(set(kept) | {i for i, s in enumerate(samples)
                                 if s.label != LK})
    return [samples[i] for i in chosen]


def evaluate_loss(samples: list[LabeledSample], params,
                  batch_size: int = 256) -> float:
    """Mean per-sample NLL; identical to the training-loop computation."""
    if not samples:
        raise ValueError("evaluate_loss: empty sample list")
    total = 0.0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        labels = np.array([s.label for s in chunk], dtype=np.intp)
        _, loss = nm.softmax_nll(logits_for(chunk, params), labels)
        total += float(loss.values) * len(chunk)
    return total / len(samples)


def _snapshot(params) -> dict[str, np.ndarray]:
    return {name: t.values.copy() for name, t in params.tensors().items()}


def _restore(kind: str, hidden: int, snapshot: dict[str, np.ndarray]):
    tensors = {name: nm.parameter(arr.copy(), name)
               for name, arr in snapshot.items()}
    return PARAMETER_CLASSES[kind](tensors, hidden)


def train(samples: list[LabeledSample], config: TrainConfig) -> TrainResult:
    """Train from scratch; fully deterministic given (samples, config).

    Per epoch: seeded shuffle, Adam updates on mean-NLL batches, then a
    validation pass. Returns the parameters of the best validation epoch
    and stops early after ``patience`` epochs without improvement.
    """
    if not samples:
        raise TrainingError("training dataset is empty")
    labels_present = {s.label for s in samples}
    if len(labels_present) < 2:
        log.warning("dataset contains a single class (%s); recall will be "
                    "undefined", labels_present)

    train_samples, val_samples = _split_for_validation(samples, config)
    rng = np.random.default_rng(config.seed)
    if config.balance_classes:
        n_before = len(train_samples)
        train_samples = _balance_lane_keeps(train_samples, rng)
        if len(train_samples) != n_before:
            log.info("balanced lane-keep samples %d -> %d", n_before,
                     len(train_samples))

    params = PARAMETER_CLASSES[config.model].init(config.seed,
                                                  config.hidden_size)
    tensors = params.parameters()
    adam = nm.AdamState(tensors, learning_rate=config.learning_rate)

    result = TrainResult(params)
    best: dict[str, np.ndarray] | None = None
    since_best = 0
    n = len(train_samples)
    log.info("training %s on %d samples (%d validation)", config.model, n,
             len(val_samples))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            batch = [train_samples[i] for i in perm[lo:lo + config.batch_size]]
            labels = np.array([s.label for s in batch], dtype=np.intp)
            logits = logits_for(batch, params)
            _, loss = nm.softmax_nll(logits, labels)
            loss_val = float(loss.values)
            if not math.isfinite(loss_val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, "
                                    f"batch {lo // config.batch_size}")
            nm.zero_gradients(tensors)
            nm.backward(loss)
            nm.adam_step(tensors, adam)
            total += loss_val * len(batch)
        train_nll = total / n
        val_nll = evaluate_loss(val_samples, params,
                                batch_size=max(config.batch_size, 256))
        result.history.append(EpochStats(epoch, train_nll, val_nll))
        log.info("epoch %d: train %.4f, val %.4f", epoch, train_nll, val_nll)
        if val_nll < result.best_val_nll:
            result.best_val_nll = val_nll
            result.best_epoch = epoch
            best = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.info("early stop at epoch %d (no improvement for %d)",
                         epoch, config.patience)
                break

    result.params = _restore(config.model, config.hidden_size, best)
    return result


def save_history(history: list[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_nll,val_nll\n")
        for h in history:
            fh.write(f"{h.epoch},{h.train_nll:.17g},{h.val_nll:.17g}\n")
