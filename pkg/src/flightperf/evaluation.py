"""Classification and regression metrics over per-timestep scores, and report assembly."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datapipe import FlightSequence
from .records import N_CLASSES

CORRELATION_BINS = np.linspace(-1.0, 1.0, 21)
# per-timestep |error| bands used for flight-path colouring
ERROR_BANDS = ((0, 1, "le1"), (2, 3, "2-3"), (4, 7, "4-7"), (8, 9, "gt7"))

Predictor = Callable[[Sequence[FlightSequence]], Sequence[np.ndarray]]


class LengthMismatch(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class EmptyMatrix(ValueError):
    pass


def _pair(true, pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(true)
    p = np.asarray(pred)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    return t, p


def confusion_matrix(true, pred) -> np.ndarray:
    """10x10 counts, rows = true score, columns = predicted score."""
    t, p = _pair(true, pred)
    t = t.astype(int)
    p = p.astype(int)
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 1 or arr.max() > N_CLASSES):
            raise OutOfRange(f"{name} scores outside 1..{N_CLASSES}")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


def weighted_prf(cm: np.ndarray) -> tuple[float, float, float]:
    """Support-weighted precision, recall and F1 in percent (0/0 counts as 0).

    Evaluated in exact rational arithmetic and rounded once, so weighted
    recall comes out bit-equal to accuracy.
    """
    cm = np.asarray(cm)
    counts = [[int(x) for x in row] for row in cm]
    total = sum(map(sum, counts))
    if total == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    k = len(counts)
    p_sum = r_sum = f_sum = Fraction(0)
    for i in range(k):
        support = sum(counts[i])
        if support == 0:
            continue
        tp = counts[i][i]
        predicted = sum(counts[j][i] for j in range(k))
        precision = Fraction(tp, predicted) if predicted else Fraction(0)
        recall = Fraction(tp, support)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
        p_sum += support * precision
        r_sum += support * recall
        f_sum += support * f1
    return tuple(float(100 * x / total) for x in (p_sum, r_sum, f_sum))


def accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    return 100.0 * float(np.trace(cm)) / float(cm.sum())


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm, dtype=float)
    return _safe_div(np.diag(cm), cm.sum(axis=1))


def rmse_scores(true, pred) -> float:
    t, p = _pair(true, pred)
    d = p.astype(float) - t.astype(float)
    return float(np.sqrt(np.mean(d * d)))


def within_k_rate(true, pred, k: int = 1) -> float:
    t, p = _pair(true, pred)
    return 100.0 * float(np.mean(np.abs(p.astype(int) - t.astype(int)) <= k))


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(dx @ dy) / np.sqrt(sxx * syy)


def per_flight_correlation(flights: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[list[float], int]:
    """Pearson r for every flight, plus how many flights were skipped for zero variance."""
    rs: list[float] = []
    excluded = 0
    for true, pred in flights:
        _pair(true, pred)
        r = pearson(true, pred) if len(true) >= 2 else None
        if r is None:
            excluded += 1
        else:
            rs.append(r)
    return rs, excluded


@dataclass
class EvalReport:
    model: str
    confusion: list[list[int]]
    precision: float
    recall: float
    f1: float
    accuracy: float
    rmse: float
    within_1_rate: float
    within_k: int
    within_k_rate: float
    correlation_bin_edges: list[float]
    correlation_counts: list[int]
    mean_correlation: float | None
    excluded_flat_sequences: int
    n_flights: int
    n_timesteps: int
    timing: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate_predictions(model: str, seqs: Sequence[FlightSequence], preds: Sequence[np.ndarray],
                         k: int = 1, timing: dict[str, float] | None = None) -> EvalReport:
    if len(seqs) != len(preds):
        raise LengthMismatch(f"{len(seqs)} flights but {len(preds)} predictions")
    trues = [s.scores for s in seqs]
    for s, t, p in zip(seqs, trues, preds):
        if len(t) != len(p):
            raise LengthMismatch(f"flight {s.flight_id}: {len(t)} labels, {len(p)} predictions")
    t_all = np.concatenate(trues)
    p_all = np.concatenate([np.asarray(p, dtype=int) for p in preds])
    cm = confusion_matrix(t_all, p_all)
    precision, recall, f1 = weighted_prf(cm)
    rs, excluded = per_flight_correlation(list(zip(trues, preds)))
    counts, edges = np.histogram(rs, bins=CORRELATION_BINS)
    return EvalReport(
        model=model,
        confusion=cm.tolist(),
        precision=precision, recall=recall, f1=f1,
        accuracy=accuracy(cm),
        rmse=rmse_scores(t_all, p_all),
        within_1_rate=within_k_rate(t_all, p_all, 1),
        within_k=k,
        within_k_rate=within_k_rate(t_all, p_all, k),
        correlation_bin_edges=edges.tolist(),
        correlation_counts=counts.tolist(),
        mean_correlation=float(np.mean(rs)) if rs else None,
        excluded_flat_sequences=excluded,
        n_flights=len(seqs),
        n_timesteps=int(t_all.size),
        timing=dict(timing or {}),
    )


def evaluate_model(model: str, predictor: Predictor, seqs: Sequence[FlightSequence], k: int = 1) -> tuple[EvalReport, list[np.ndarray]]:
    """Run `predictor` over the test flights, timing the call, and score it."""
    start = time.perf_counter()
    preds = [np.asarray(p, dtype=int) for p in predictor(seqs)]
    elapsed = time.perf_counter() - start
    return evaluate_predictions(model, seqs, preds, k, {"inference_seconds": elapsed}), preds


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text()))


def error_band(diff: int) -> str:
    d = abs(int(diff))
    for lo, hi, name in ERROR_BANDS:
        if lo <= d <= hi:
            return name
    raise OutOfRange(f"score difference {diff}")


def write_confusion_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true"] + [f"pred_{j}" for j in range(1, N_CLASSES + 1)])
        for i, row in enumerate(report.confusion, start=1):
            w.writerow([i] + row)


def write_correlation_csv(report: EvalReport, path: str | Path) -> None:
    e = report.correlation_bin_edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(e[:-1], e[1:], report.correlation_counts):
            w.writerow([lo, hi, c])


def write_error_trace_csv(seqs: Sequence[FlightSequence], preds: Sequence[np.ndarray], path: str | Path,
                          positions: dict[str, list[tuple[float, float]]] | None = None) -> None:
    """One row per test timestep with the colouring band of |pred - true|."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "step", "latitude", "longitude", "true", "pred", "abs_diff", "band"])
        for s, p in zip(seqs, preds):
            pos = (positions or {}).get(s.flight_id)
            for t, (y, yh) in enumerate(zip(s.scores.tolist(), np.asarray(p).tolist())):
                lat, lon = pos[t] if pos is not None else ("", "")
                w.writerow([s.flight_id, t, lat, lon, y, yh, abs(yh - y), error_band(yh - y)])
