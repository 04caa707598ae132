"""Mini-batch training with gradient accumulation, plateau LR decay and early stopping."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..datapipe import FlightSequence
from .model import (
    ModelDims,
    Params,
    backward,
    class_weights,
    forward,
    init_params,
    zeros_like_params,
)
from .optim import AdamState, PlateauScheduler, adam_step

log = logging.getLogger(__name__)


class EmptySplit(ValueError):
    pass


class NormalizationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.0001
    batch_size: int = 128
    accumulation_steps: int = 4
    plateau_patience: int = 5
    plateau_factor: float = 0.9
    early_stop_patience: int = 15
    dropout_rate: float = 0.2
    dropout_all_layers: bool = False
    max_epochs: int = 100
    min_delta: float = 1e-6
    class_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.accumulation_steps < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch_size, accumulation_steps and max_epochs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Batch:
    inputs: np.ndarray   # (B, T_max, F)
    labels: np.ndarray   # (B, T_max, K)
    mask: np.ndarray     # (B, T_max)
    lengths: np.ndarray  # (B,)


def pad_batch(seqs: Sequence[FlightSequence]) -> Batch:
    """Zero-pad to the longest sequence in the batch."""
    lengths = np.array([s.length for s in seqs])
    T = int(lengths.max())
    F = seqs[0].inputs.shape[1]
    K = seqs[0].labels.shape[1]
    X = np.zeros((len(seqs), T, F))
    Y = np.zeros((len(seqs), T, K))
    M = np.zeros((len(seqs), T))
    for b, s in enumerate(seqs):
        X[b, :s.length] = s.inputs
        Y[b, :s.length] = s.labels
        M[b, :s.length] = 1.0
    return Batch(X, Y, M, lengths)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    params: Params
    weights: np.ndarray
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def _sequence_weights(seqs: Sequence[FlightSequence], n_classes: int) -> np.ndarray:
    labels = np.concatenate([s.labels for s in seqs], axis=0)
    return class_weights(labels, None, n_classes)


def evaluate_loss(params: Params, seqs: Sequence[FlightSequence], weights: np.ndarray, batch_size: int = 256) -> float:
    """Weighted cross-entropy over every real timestep of `seqs` (eval mode)."""
    num = 0.0
    den = 0.0
    for start in range(0, len(seqs), batch_size):
        batch = pad_batch(seqs[start:start + batch_size])
        probs, _ = forward(params, batch.inputs, train=False)
        y = batch.labels.argmax(axis=-1)
        coef = batch.mask * weights[y]
        p_true = np.take_along_axis(probs, y[..., None], axis=-1)[..., 0]
        num += float((coef * -np.log(np.clip(p_true, 1e-12, 1.0))).sum())
        den += float(coef.sum())
    return num / den


def train(train_seqs: Sequence[FlightSequence], val_seqs: Sequence[FlightSequence],
          config: TrainConfig = TrainConfig(), dims: ModelDims | None = None,
          init: Params | None = None) -> TrainResult:
    """Fit the classifier and return the parameters with the best validation loss.

    Each epoch shuffles the training flights into mini-batches; gradients of
    `accumulation_steps` consecutive mini-batches are summed before one Adam
    update.
    """
    if not train_seqs or not val_seqs:
        raise EmptySplit("training and validation splits must be non-empty")
    if dims is None:
        dims = ModelDims(input_size=train_seqs[0].inputs.shape[1])
    rng = np.random.default_rng(config.seed)
    params = init if init is not None else init_params(dims, np.random.default_rng([config.seed, 1]))
    params = {k: v.copy() for k, v in params.items()}
    if config.class_weighting:
        weights = _sequence_weights(train_seqs, dims.n_classes)
    else:
        weights = np.ones(dims.n_classes)

    state = AdamState()
    sched = PlateauScheduler(config.lr, config.plateau_factor, config.plateau_patience, config.min_delta)
    result = TrainResult({k: v.copy() for k, v in params.items()}, weights)
    lr = config.lr
    stale = 0
    n = len(train_seqs)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        acc = zeros_like_params(params)
        pending = 0
        losses = []
        for start in range(0, n, config.batch_size):
            batch = pad_batch([train_seqs[i] for i in order[start:start + config.batch_size]])
            probs, cache = forward(params, batch.inputs, train=True, rng=rng, dropout=config.dropout_rate,
                                   dropout_all_layers=config.dropout_all_layers)
            y = batch.labels.argmax(axis=-1)
            coef = batch.mask * weights[y]
            p_true = np.take_along_axis(probs, y[..., None], axis=-1)[..., 0]
            losses.append(float((coef * -np.log(np.clip(p_true, 1e-12, 1.0))).sum() / coef.sum()))
            grads = backward(params, cache, batch.labels, batch.mask, weights)
            for k in acc:
                acc[k] += grads[k]
            pending += 1
            if pending == config.accumulation_steps:
                adam_step(params, acc, state, lr, config.weight_decay)
                acc = zeros_like_params(params)
                pending = 0
        if pending:
            adam_step(params, acc, state, lr, config.weight_decay)

        val_loss = evaluate_loss(params, val_seqs, weights)
        train_loss = float(np.mean(losses))
        result.log.append(EpochLog(epoch, train_loss, val_loss, lr))
        log.info("epoch %d train %.5f val %.5f lr %.6g", epoch, train_loss, val_loss, lr)
        if val_loss < result.best_val_loss - config.min_delta:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
        lr = sched.step(val_loss)
    return result


def write_log(entries: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for e in entries:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr)])


def predict_proba(params: Params, seqs: Sequence[FlightSequence], batch_size: int = 256) -> list[np.ndarray]:
    """Per-flight (T, K) class probabilities, eval mode."""
    width = params["W0"].shape[1]
    out = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        for s in chunk:
            if s.inputs.shape[1] != width:
                raise NormalizationMismatch(f"flight {s.flight_id}: {s.inputs.shape[1]} features, model expects {width}")
        batch = pad_batch(chunk)
        probs, _ = forward(params, batch.inputs, train=False)
        out.extend(probs[b, :s.length].copy() for b, s in enumerate(chunk))
    return out


def predict_scores(params: Params, seqs: Sequence[FlightSequence], batch_size: int = 256) -> list[np.ndarray]:
    return [p.argmax(axis=1) + 1 for p in predict_proba(params, seqs, batch_size)]
