"""Lookup-table baseline: each position gets its hex cell's mean historical score."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geodesy import DEFAULT_CELL_RADIUS_KM, GeoPoint, hex_index
from .performance_grid import GLOBAL_KEY, PerformanceGrid, build_grid
from .records import N_CLASSES, TelemetryRecord


class EmptyTraining(ValueError):
    pass


@dataclass
class RuleTable:
    circumradius_km: float
    anchors: dict[str, GeoPoint]
    lookup: dict[tuple[str, int, int], float]
    global_mean: float

    def mean_at(self, p: GeoPoint, beam_id: str | None) -> float | None:
        anchor = self.anchors.get(beam_id) if beam_id is not None else None
        if anchor is None:
            return None
        h = hex_index(p, anchor, self.circumradius_km)
        return self.lookup.get((beam_id, h.q, h.r))


def table_from_grid(grid: PerformanceGrid) -> RuleTable:
    if grid.fallback.sample_count == 0:
        raise EmptyTraining("grid was built from no records")
    return RuleTable(grid.circumradius_km, dict(grid.anchors),
                     {key: c.mean_score for key, c in grid.cells.items()}, grid.fallback.mean_score)


def build_rule_table(train: Iterable[TelemetryRecord], circumradius_km: float = DEFAULT_CELL_RADIUS_KM,
                     anchors: Mapping[str, GeoPoint] | None = None) -> RuleTable:
    """Per-(beam, cell) arithmetic mean of training scores, plus the overall mean."""
    train = list(train)
    if not train:
        raise EmptyTraining("no training records")
    return table_from_grid(build_grid(train, circumradius_km, anchors))


def to_class(mean: float) -> int:
    # numpy rounds half to even
    return int(np.clip(np.round(mean), 1, N_CLASSES))


def predict_rule(table: RuleTable, flights: Sequence[Sequence[TelemetryRecord]]) -> list[np.ndarray]:
    """Rounded cell mean per record; cells never seen in training fall back to the global mean."""
    fallback = to_class(table.global_mean)
    out = []
    for recs in flights:
        preds = []
        for rec in recs:
            m = table.mean_at(rec.position, rec.beam_id)
            preds.append(fallback if m is None else to_class(m))
        out.append(np.array(preds, dtype=int))
    return out


def table_to_json(table: RuleTable) -> dict:
    cells: dict[str, float] = {f"{b}/{q}/{r}": m for (b, q, r), m in sorted(table.lookup.items())}
    cells[GLOBAL_KEY] = table.global_mean
    return {"circumradius_km": table.circumradius_km,
            "anchors": {b: a.to_json() for b, a in sorted(table.anchors.items())},
            "cells": cells}


def table_from_json(doc: dict) -> RuleTable:
    lookup = {}
    global_mean = None
    for key, m in doc["cells"].items():
        if key == GLOBAL_KEY:
            global_mean = float(m)
            continue
        beam, q, r = key.rsplit("/", 2)
        lookup[(beam, int(q), int(r))] = float(m)
    if global_mean is None:
        raise ValueError(f"rule table lacks {GLOBAL_KEY!r}")
    anchors = {b: GeoPoint.from_json(a) for b, a in doc["anchors"].items()}
    return RuleTable(float(doc["circumradius_km"]), anchors, lookup, global_mean)


def save_table(table: RuleTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table_to_json(table), sort_keys=True) + "\n")


def load_table(path: str | Path) -> RuleTable:
    return table_from_json(json.loads(Path(path).read_text()))
