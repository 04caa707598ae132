"""Exact k-nearest-neighbour classifier over per-timestep feature vectors, backed by a KD-tree."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datapipe import N_FEATURES, FlightSequence

DEFAULT_K = 3
LEAF_SIZE = 128


class TooFewPoints(ValueError):
    pass


class NormalizationMismatch(ValueError):
    pass


@dataclass
class _Node:
    axis: int = -1
    split: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    indices: np.ndarray | None = None   # leaves only, ascending insertion order


def _build(points: np.ndarray, idx: np.ndarray, depth: int, leaf_size: int) -> _Node:
    if idx.size <= leaf_size:
        return _Node(indices=np.sort(idx))
    axis = depth % points.shape[1]
    vals = points[idx, axis]
    mid = idx.size // 2
    order = np.argpartition(vals, mid, kind="introselect")
    left, right = idx[order[:mid]], idx[order[mid:]]
    # every left value <= split <= every right value
    return _Node(axis, float(vals[order[mid]]), _build(points, left, depth + 1, leaf_size),
                 _build(points, right, depth + 1, leaf_size))


class KdTree:
    """Axis-cycling KD-tree with median pivots; leaves are scanned with numpy."""

    def __init__(self, points: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.leaf_size = leaf_size
        self.root = _build(self.points, np.arange(len(self.points)), 0, leaf_size)

    def query(self, q: np.ndarray, k: int) -> list[tuple[float, int]]:
        """The k nearest (squared distance, index) pairs, ascending, ties by lower index."""
        # max-heap of (-d2, -idx): the root is the current worst neighbour
        best: list[tuple[float, int]] = []
        pts = self.points

        def worse_than_worst(d2: float) -> bool:
            return len(best) == k and d2 > -best[0][0]

        def visit(node: _Node) -> None:
            if node.indices is not None:
                diff = pts[node.indices] - q
                d2s = np.einsum("ij,ij->i", diff, diff)
                for d2, i in zip(d2s.tolist(), node.indices.tolist()):
                    if len(best) < k:
                        heapq.heappush(best, (-d2, -i))
                    elif (d2, i) < (-best[0][0], -best[0][1]):
                        heapq.heapreplace(best, (-d2, -i))
                return
            delta = q[node.axis] - node.split
            near, far = (node.left, node.right) if delta <= 0 else (node.right, node.left)
            visit(near)
            # equality kept so equal-distance points with lower indices are still seen
            if not worse_than_worst(delta * delta):
                visit(far)

        visit(self.root)
        return sorted((-d, -i) for d, i in best)


@dataclass
class KnnIndex:
    points: np.ndarray     # (N, 36)
    labels: np.ndarray     # (N,) in 1..10
    k: int = DEFAULT_K

    def __post_init__(self):
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels differ in length")
        self.tree = KdTree(self.points)

    @property
    def size(self) -> int:
        return int(len(self.points))


def build_index(train: Sequence[FlightSequence], k: int = DEFAULT_K) -> KnnIndex:
    """Flatten every timestep of every training flight into one (point, label) table."""
    if not train:
        raise TooFewPoints("no training flights")
    points = np.concatenate([s.inputs for s in train], axis=0)
    labels = np.concatenate([s.scores for s in train]).astype(int)
    if len(points) < k:
        raise TooFewPoints(f"need at least {k} training timesteps, got {len(points)}")
    return KnnIndex(points, labels, k)


def query_knn(index: KnnIndex, q: np.ndarray) -> list[tuple[float, int]]:
    """Nearest k as (Euclidean distance, label) pairs, ascending."""
    return [(float(np.sqrt(d2)), int(index.labels[i])) for d2, i in index.tree.query(np.asarray(q, float), index.k)]


def neighbor_indices(index: KnnIndex, q: np.ndarray) -> list[int]:
    return [i for _, i in index.tree.query(np.asarray(q, float), index.k)]


def vote(labels: Sequence[int]) -> int:
    """Majority label; when no label repeats, the first (nearest) one wins."""
    counts: dict[int, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    top = max(counts.values())
    for lab in labels:
        if counts[lab] == top:
            return lab
    raise AssertionError("unreachable")


def predict_knn(index: KnnIndex, seqs: Sequence[FlightSequence]) -> list[np.ndarray]:
    width = index.points.shape[1]
    out = []
    for s in seqs:
        if s.inputs.shape[1] != width:
            raise NormalizationMismatch(f"flight {s.flight_id}: {s.inputs.shape[1]} features, index has {width}")
        out.append(np.array([vote([lab for _, lab in query_knn(index, x)]) for x in s.inputs], dtype=int))
    return out


def index_to_json(index: KnnIndex) -> dict:
    return {"k": index.k, "n_features": int(index.points.shape[1]),
            "points": index.points.tolist(), "labels": index.labels.tolist()}


def index_from_json(doc: dict) -> KnnIndex:
    width = int(doc.get("n_features", N_FEATURES))
    return KnnIndex(np.asarray(doc["points"], dtype=float).reshape(-1, width),
                    np.asarray(doc["labels"], dtype=int), int(doc["k"]))


def save_index(index: KnnIndex, path: str | Path) -> None:
    Path(path).write_text(json.dumps(index_to_json(index)) + "\n")


def load_index(path: str | Path) -> KnnIndex:
    return index_from_json(json.loads(Path(path).read_text()))
