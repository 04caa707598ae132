"""Candidate flight plans: trajectory synthesis, featurization and ranking by predicted score."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datapipe import RESAMPLE_SECONDS, FlightSequence, NormalizationStats, Vocab, apply_minmax, featurize_flight
from .geodesy import GeoPoint, haversine_km, interpolate_great_circle
from .handover_atlas import AtlasQuery
from .performance_grid import AircraftHistory, PerformanceGrid
from .records import TelemetryRecord

log = logging.getLogger(__name__)

DEFAULT_CRUISE_KMH = 900.0
SAME_ENDPOINT_KM = 1.0


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoint:
    position: GeoPoint
    altitude: float = 41000.0


@dataclass(frozen=True)
class FlightPlan:
    plan_id: str
    waypoints: tuple[Waypoint, ...]
    departure_time: int
    tail_id: str
    origin_airport: str | None = None
    destination_airport: str | None = None

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise PlanError(f"plan {self.plan_id}: needs at least two waypoints")
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a.position == b.position:
                raise PlanError(f"plan {self.plan_id}: consecutive waypoints coincide")

    def to_json(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "tail_id": self.tail_id,
            "departure_time": self.departure_time,
            "origin_airport": self.origin_airport,
            "destination_airport": self.destination_airport,
            "waypoints": [{**w.position.to_json(), "altitude": w.altitude} for w in self.waypoints],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FlightPlan":
        wps = tuple(Waypoint(GeoPoint(float(w["latitude"]), float(w["longitude"])), float(w.get("altitude", 41000.0)))
                    for w in d["waypoints"])
        return cls(str(d["plan_id"]), wps, int(d["departure_time"]), str(d["tail_id"]),
                   d.get("origin_airport"), d.get("destination_airport"))


def load_plans(path: str | Path) -> list[FlightPlan]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list) or not doc:
        raise PlanError("plans file must hold a non-empty JSON list")
    return [FlightPlan.from_json(d) for d in doc]


def trajectory(plan: FlightPlan, speed_kmh: float = DEFAULT_CRUISE_KMH,
               interval: int = RESAMPLE_SECONDS) -> list[tuple[int, GeoPoint, float]]:
    """(timestamp, position, altitude) every `interval` s along the waypoints, plus the arrival point."""
    legs = [haversine_km(a.position, b.position) for a, b in zip(plan.waypoints, plan.waypoints[1:])]
    bounds = np.concatenate([[0.0], np.cumsum(legs)])
    total = float(bounds[-1])
    step_km = speed_kmh * interval / 3600.0
    marks = list(np.arange(0.0, total, step_km)) + [total]
    if len(marks) >= 2 and marks[-1] - marks[-2] < 1e-9:
        marks.pop(-2)
    out = []
    for s in marks:
        leg = min(int(np.searchsorted(bounds, s, side="right")) - 1, len(legs) - 1)
        frac = (s - bounds[leg]) / legs[leg]
        a, b = plan.waypoints[leg], plan.waypoints[leg + 1]
        pos = interpolate_great_circle(a.position, b.position, min(1.0, max(0.0, frac)))
        alt = a.altitude + (b.altitude - a.altitude) * frac
        out.append((plan.departure_time + int(round(s / speed_kmh * 3600.0)), pos, float(alt)))
    return out


def plan_records(plan: FlightPlan, grid: PerformanceGrid, devices: int = 0,
                 speed_kmh: float = DEFAULT_CRUISE_KMH) -> list[TelemetryRecord]:
    """Synthetic pre-flight records: the busiest historical beam at each point is assumed to serve it."""
    recs = []
    for ts, pos, alt in trajectory(plan, speed_kmh):
        cells = grid.beams_at(pos)
        beam = cells[0].beam_id if cells else None
        sat = grid.beam_satellite.get(beam) if beam is not None else None
        # the score field is a placeholder; prediction never reads labels
        recs.append(TelemetryRecord(plan.plan_id, ts, plan.tail_id, plan.origin_airport or "",
                                    plan.destination_airport or "", pos, alt, sat, beam, 0.0, 0.0, devices, 1))
    return recs


def featurize_plan(plan: FlightPlan, atlas: AtlasQuery, grid: PerformanceGrid, history: AircraftHistory,
                   vocab: Vocab, norm: NormalizationStats, speed_kmh: float = DEFAULT_CRUISE_KMH) -> FlightSequence:
    stats = history.stats(plan.tail_id, plan.departure_time)
    recs = plan_records(plan, grid, int(round(stats.mean_recent_devices)), speed_kmh)
    if len(recs) < 2:
        raise PlanError(f"plan {plan.plan_id}: trajectory too short to featurize")
    return apply_minmax(norm, featurize_flight(recs, atlas, grid, stats, vocab))


@dataclass
class RankedPlan:
    rank: int
    plan_id: str
    mean_score: float
    min_score: int
    min_step: int
    min_position: GeoPoint
    scores: list[int]

    def to_json(self) -> dict:
        return {"rank": self.rank, "plan_id": self.plan_id, "mean_score": self.mean_score,
                "min_score": self.min_score,
                "min_segment": {"step": self.min_step, **self.min_position.to_json()},
                "scores": self.scores}


def _check_city_pair(plans: Sequence[FlightPlan]) -> None:
    a0, b0 = plans[0].waypoints[0].position, plans[0].waypoints[-1].position
    for p in plans[1:]:
        if (haversine_km(p.waypoints[0].position, a0) > SAME_ENDPOINT_KM
                or haversine_km(p.waypoints[-1].position, b0) > SAME_ENDPOINT_KM):
            log.warning("plan %s does not share the city pair of plan %s", p.plan_id, plans[0].plan_id)


def rank_plans(plans: Sequence[FlightPlan], seqs: Sequence[FlightSequence],
               predict: Callable[[Sequence[FlightSequence]], Sequence[np.ndarray]],
               speed_kmh: float = DEFAULT_CRUISE_KMH) -> list[RankedPlan]:
    """Order by mean predicted score, then by the worst segment, then by plan id (all descending-best)."""
    if not plans:
        raise PlanError("no plans to rank")
    _check_city_pair(plans)
    preds = predict(seqs)
    rows = []
    for plan, seq, scores in zip(plans, seqs, preds):
        scores = np.asarray(scores, dtype=int)
        k = int(np.argmin(scores))
        pos = plan_positions(plan, speed_kmh)[k]
        rows.append((plan, float(scores.mean()), int(scores[k]), k, pos, scores.tolist()))
    rows.sort(key=lambda r: (-r[1], -r[2], r[0].plan_id))
    return [RankedPlan(i + 1, r[0].plan_id, r[1], r[2], r[3], r[4], r[5]) for i, r in enumerate(rows)]


def plan_positions(plan: FlightPlan, speed_kmh: float = DEFAULT_CRUISE_KMH) -> list[GeoPoint]:
    return [pos for _, pos, _ in trajectory(plan, speed_kmh)]
