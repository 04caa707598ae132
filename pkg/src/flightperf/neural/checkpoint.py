"""Versioned single-file JSON checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datapipe import NormalizationStats, Vocab
from .model import ModelDims, Params, dims_of, param_shapes
from .train import TrainConfig

FORMAT_VERSION = "1"


class VersionMismatch(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


@dataclass
class Checkpoint:
    params: Params
    config: TrainConfig
    normalization: NormalizationStats
    vocab: Vocab
    class_weights: np.ndarray
    best_epoch: int = 0


def checkpoint_to_json(ckpt: Checkpoint) -> dict:
    # repr-level float text through json keeps every bit of the float64 values
    return {
        "version": FORMAT_VERSION,
        "dims": dims_of(ckpt.params).to_json(),
        "config": ckpt.config.to_json(),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}
            for name, arr in sorted(ckpt.params.items())
        },
        "normalization": ckpt.normalization.to_json(),
        "vocab": ckpt.vocab.to_json(),
        "class_weights": ckpt.class_weights.tolist(),
        "best_epoch": ckpt.best_epoch,
    }


def checkpoint_from_json(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptCheckpoint("missing version field")
    if doc["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc['version']!r}, expected {FORMAT_VERSION!r}")
    try:
        dims = ModelDims(**doc["dims"])
        expected = param_shapes(dims)
        params: Params = {}
        for name, shape in expected.items():
            entry = doc["params"][name]
            if tuple(entry["shape"]) != shape:
                raise CorruptCheckpoint(f"{name}: shape {entry['shape']} != {list(shape)}")
            arr = np.asarray(entry["data"], dtype=float)
            if arr.size != int(np.prod(shape)):
                raise CorruptCheckpoint(f"{name}: {arr.size} values for shape {list(shape)}")
            params[name] = arr.reshape(shape)
        if not all(np.all(np.isfinite(a)) for a in params.values()):
            raise CorruptCheckpoint("non-finite parameter values")
        return Checkpoint(
            params,
            TrainConfig.from_json(doc["config"]),
            NormalizationStats.from_json(doc["normalization"]),
            Vocab.from_json(doc["vocab"]),
            np.asarray(doc["class_weights"], dtype=float),
            int(doc.get("best_epoch", 0)),
        )
    except CorruptCheckpoint:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_json(ckpt), sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: not valid JSON ({exc})") from exc
    return checkpoint_from_json(doc)
