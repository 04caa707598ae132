"""Historical link quality per hexagonal cell and per-aircraft recent history."""
from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geodesy import DEFAULT_CELL_RADIUS_KM, GeoPoint, HexIndex, hex_index
from .records import TelemetryRecord

AIRCRAFT_WINDOW = 5
GLOBAL_KEY = "_global"


@dataclass(frozen=True)
class CellStats:
    cell: HexIndex
    beam_id: str
    mean_snr: float
    mean_mir: float
    mean_score: float
    sample_count: int


@dataclass(frozen=True)
class GlobalFallback:
    mean_snr: float
    mean_mir: float
    mean_score: float
    sample_count: int


@dataclass
class PerformanceGrid:
    circumradius_km: float
    anchors: dict[str, GeoPoint]
    cells: dict[tuple[str, int, int], CellStats]
    fallback: GlobalFallback
    beam_satellite: dict[str, str] = field(default_factory=dict)

    def cell_key(self, p: GeoPoint, beam_id: str) -> tuple[str, int, int] | None:
        anchor = self.anchors.get(beam_id)
        if anchor is None:
            return None
        h = hex_index(p, anchor, self.circumradius_km)
        return beam_id, h.q, h.r

    def beams_at(self, p: GeoPoint) -> list[CellStats]:
        """Cells of every beam covering p, busiest first (ties by beam id)."""
        hits = []
        for beam in self.anchors:
            key = self.cell_key(p, beam)
            if key in self.cells:
                hits.append(self.cells[key])
        hits.sort(key=lambda c: (-c.sample_count, c.beam_id))
        return hits


def _centroid_anchor(points: Sequence[GeoPoint]) -> GeoPoint:
    ref = points[0].longitude
    dlon = sum(((p.longitude - ref + 180.0) % 360.0) - 180.0 for p in points) / len(points)
    lat = sum(p.latitude for p in points) / len(points)
    return GeoPoint(round(lat, 4), round(ref + dlon, 4))


def build_grid(history: Iterable[TelemetryRecord], circumradius_km: float = DEFAULT_CELL_RADIUS_KM,
               anchors: Mapping[str, GeoPoint] | None = None) -> PerformanceGrid:
    """Average SNR, MIR and score per (beam, hex cell).

    Cells are anchored at each beam's centre when `anchors` provides it,
    otherwise at the centroid of that beam's records. Records without a
    serving beam only contribute to the dataset-wide fallback.
    """
    history = list(history)
    by_beam: dict[str, list[TelemetryRecord]] = {}
    for rec in history:
        if rec.beam_id is not None:
            by_beam.setdefault(rec.beam_id, []).append(rec)
    anchor_map: dict[str, GeoPoint] = {}
    for beam in sorted(by_beam):
        if anchors is not None and beam in anchors:
            anchor_map[beam] = anchors[beam]
        else:
            anchor_map[beam] = _centroid_anchor([r.position for r in by_beam[beam]])

    sums: dict[tuple[str, int, int], list[float]] = {}
    beam_sat: dict[str, str] = {}
    for beam, recs in sorted(by_beam.items()):
        anchor = anchor_map[beam]
        for rec in recs:
            h = hex_index(rec.position, anchor, circumradius_km)
            acc = sums.setdefault((beam, h.q, h.r), [0.0, 0.0, 0.0, 0])
            acc[0] += rec.snr
            acc[1] += rec.mir
            acc[2] += rec.score
            acc[3] += 1
            if rec.satellite_id is not None:
                beam_sat.setdefault(beam, rec.satellite_id)
    cells = {
        key: CellStats(HexIndex(key[1], key[2], anchor_map[key[0]]), key[0],
                       s[0] / s[3], s[1] / s[3], s[2] / s[3], int(s[3]))
        for key, s in sorted(sums.items())
    }
    n = len(history)
    if n:
        fallback = GlobalFallback(sum(r.snr for r in history) / n, sum(r.mir for r in history) / n,
                                  sum(r.score for r in history) / n, n)
    else:
        fallback = GlobalFallback(0.0, 0.0, 0.0, 0)
    return PerformanceGrid(circumradius_km, anchor_map, cells, fallback, beam_sat)


def query_cell(grid: PerformanceGrid, p: GeoPoint, beam_id: str | None) -> CellStats | GlobalFallback:
    if beam_id is not None:
        key = grid.cell_key(p, beam_id)
        if key is not None and key in grid.cells:
            return grid.cells[key]
    return grid.fallback


def grid_to_json(grid: PerformanceGrid) -> dict:
    cells = {
        f"{beam}/{q}/{r}": {
            "mean_snr": c.mean_snr, "mean_mir": c.mean_mir,
            "mean_score": c.mean_score, "sample_count": c.sample_count,
        }
        for (beam, q, r), c in grid.cells.items()
    }
    fb = grid.fallback
    cells[GLOBAL_KEY] = {"mean_snr": fb.mean_snr, "mean_mir": fb.mean_mir,
                         "mean_score": fb.mean_score, "sample_count": fb.sample_count}
    return {
        "circumradius_km": grid.circumradius_km,
        "anchors": {b: a.to_json() for b, a in grid.anchors.items()},
        "beam_satellite": grid.beam_satellite,
        "cells": cells,
    }


def grid_from_json(doc: dict) -> PerformanceGrid:
    anchors = {b: GeoPoint.from_json(a) for b, a in doc["anchors"].items()}
    cells = {}
    fallback = None
    for key, c in doc["cells"].items():
        if key == GLOBAL_KEY:
            fallback = GlobalFallback(c["mean_snr"], c["mean_mir"], c["mean_score"], c["sample_count"])
            continue
        beam, q, r = key.rsplit("/", 2)
        cells[(beam, int(q), int(r))] = CellStats(HexIndex(int(q), int(r), anchors[beam]), beam,
                                                  c["mean_snr"], c["mean_mir"], c["mean_score"],
                                                  c["sample_count"])
    if fallback is None:
        raise ValueError(f"grid file lacks {GLOBAL_KEY!r} entry")
    return PerformanceGrid(float(doc["circumradius_km"]), anchors, cells, fallback,
                           dict(doc.get("beam_satellite", {})))


def save_grid(grid: PerformanceGrid, path: str | Path) -> None:
    Path(path).write_text(json.dumps(grid_to_json(grid), sort_keys=True) + "\n")


def load_grid(path: str | Path) -> PerformanceGrid:
    return grid_from_json(json.loads(Path(path).read_text()))


# ------------------------------------------------------------ aircraft stats

@dataclass(frozen=True)
class FlightSummary:
    tail_id: str
    departure: int
    arrival: int
    mean_score: float
    mean_devices: float


@dataclass(frozen=True)
class AircraftStats:
    tail_id: str
    mean_recent_score: float
    mean_recent_devices: float
    flights_used: int


def summarize_flight(records: Sequence[TelemetryRecord]) -> FlightSummary:
    n = len(records)
    return FlightSummary(records[0].tail_id, records[0].timestamp, records[-1].timestamp,
                         sum(r.score for r in records) / n, sum(r.connected_devices for r in records) / n)


def rolling_aircraft_stats(flights: Sequence[FlightSummary], tail_id: str, as_of: int,
                           fallback: tuple[float, float] | None = None) -> AircraftStats:
    """Mean score and device count over the tail's last five flights finished before `as_of`.

    With no prior flight the `fallback` (score, devices) pair is returned,
    defaulting to the mean over the whole log.
    """
    prior = [f for f in flights if f.tail_id == tail_id and f.arrival < as_of]
    window = prior[-AIRCRAFT_WINDOW:]
    if window:
        n = len(window)
        return AircraftStats(tail_id, sum(f.mean_score for f in window) / n,
                             sum(f.mean_devices for f in window) / n, n)
    if fallback is None:
        fallback = global_flight_means(flights)
    return AircraftStats(tail_id, fallback[0], fallback[1], 0)


def global_flight_means(flights: Sequence[FlightSummary]) -> tuple[float, float]:
    if not flights:
        return 10.0, 0.0
    n = len(flights)
    return sum(f.mean_score for f in flights) / n, sum(f.mean_devices for f in flights) / n


class AircraftHistory:
    """Per-tail index over flight summaries for fast repeated rolling lookups."""

    def __init__(self, flights: Iterable[FlightSummary], fallback: tuple[float, float] | None = None):
        flights = sorted(flights, key=lambda f: (f.departure, f.arrival))
        self.fallback = fallback if fallback is not None else global_flight_means(flights)
        self._by_tail: dict[str, list[FlightSummary]] = {}
        for f in flights:
            self._by_tail.setdefault(f.tail_id, []).append(f)
        self._arrivals = {}
        for t, fs in self._by_tail.items():
            arr = [f.arrival for f in fs]
            self._arrivals[t] = arr if arr == sorted(arr) else None

    def stats(self, tail_id: str, as_of: int) -> AircraftStats:
        fs = self._by_tail.get(tail_id)
        if not fs:
            return AircraftStats(tail_id, self.fallback[0], self.fallback[1], 0)
        arrivals = self._arrivals[tail_id]
        if arrivals is not None:
            fs = fs[:bisect_left(arrivals, as_of)]
        return rolling_aircraft_stats(fs, tail_id, as_of, self.fallback)
