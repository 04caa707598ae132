"""Telemetry records and their line-delimited JSON format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import Iterable, Iterator

from .geodesy import GeoPoint

N_CLASSES = 10


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class TelemetryRecord:
    flight_id: str
    timestamp: int
    tail_id: str
    origin_airport: str
    destination_airport: str
    position: GeoPoint
    altitude: float
    satellite_id: str | None
    beam_id: str | None
    snr: float
    mir: float
    connected_devices: int
    score: int

    def __post_init__(self):
        if not (isinstance(self.score, int) and 1 <= self.score <= N_CLASSES):
            raise ValueError(f"score must be an integer in 1..{N_CLASSES}, got {self.score!r}")
        if self.connected_devices < 0:
            raise ValueError("connected_devices must be >= 0")
        if not (math.isfinite(self.snr) and math.isfinite(self.mir) and math.isfinite(self.altitude)):
            raise ValueError("non-finite measurement")

    def to_json(self) -> dict:
        return {
            "flight_id": self.flight_id,
            "timestamp": self.timestamp,
            "tail_id": self.tail_id,
            "origin_airport": self.origin_airport,
            "destination_airport": self.destination_airport,
            "position": self.position.to_json(),
            "altitude": self.altitude,
            "satellite_id": self.satellite_id,
            "beam_id": self.beam_id,
            "snr": self.snr,
            "mir": self.mir,
            "connected_devices": self.connected_devices,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TelemetryRecord":
        score = d["score"]
        if isinstance(score, float) and score.is_integer():
            score = int(score)
        return cls(
            flight_id=str(d["flight_id"]),
            timestamp=int(d["timestamp"]),
            tail_id=str(d["tail_id"]),
            origin_airport=str(d["origin_airport"]),
            destination_airport=str(d["destination_airport"]),
            position=GeoPoint.from_json(d["position"]),
            altitude=float(d["altitude"]),
            satellite_id=d["satellite_id"],
            beam_id=d["beam_id"],
            snr=float(d["snr"]),
            mir=float(d["mir"]),
            connected_devices=int(d["connected_devices"]),
            score=score,
        )


def write_records(records: Iterable[TelemetryRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True))
            fh.write("\n")


def iter_records(path: str | Path) -> Iterator[TelemetryRecord]:
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield TelemetryRecord.from_json(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
            except KeyError as exc:
                raise MalformedRecord(line_no, f"missing field {exc}") from None
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(line_no, str(exc)) from None


def read_records(path: str | Path) -> list[TelemetryRecord]:
    return list(iter_records(path))


def group_flights(records: Iterable[TelemetryRecord]) -> dict[str, list[TelemetryRecord]]:
    """Records per flight id, each list sorted by timestamp (flight order = first seen)."""
    flights: dict[str, list[TelemetryRecord]] = {}
    for fid, grp in groupby(records, key=lambda r: r.flight_id):
        flights.setdefault(fid, []).extend(grp)
    for recs in flights.values():
        recs.sort(key=lambda r: r.timestamp)
    return flights
