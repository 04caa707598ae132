"""Numpy LSTM classifier, optimizer and training loop."""
from .checkpoint import Checkpoint, CorruptCheckpoint, VersionMismatch, load_checkpoint, save_checkpoint
from .model import ModelDims, backward, class_weights, forward, init_params, masked_weighted_ce
from .optim import AdamState, PlateauScheduler, adam_step
from .train import (
    Batch,
    EmptySplit,
    NormalizationMismatch,
    TrainConfig,
    pad_batch,
    predict_proba,
    predict_scores,
    train,
)

__all__ = [
    "AdamState", "Batch", "Checkpoint", "CorruptCheckpoint", "EmptySplit", "ModelDims",
    "NormalizationMismatch", "PlateauScheduler", "TrainConfig", "VersionMismatch", "adam_step",
    "backward", "class_weights", "forward", "init_params", "load_checkpoint", "masked_weighted_ce",
    "pad_batch", "predict_proba", "predict_scores", "save_checkpoint", "train",
]
