"""Synthetic GEO constellation, flight schedule and telemetry.

Stands in for proprietary operator data: a handful of geostationary
satellites with hex-packed spot beams over a service box, aircraft flying
great-circle legs between random airports, 30-second telemetry with a beam
selection model, handover events and a 1-10 performance score.
"""
from __future__ import annotations

import calendar
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .geodesy import (
    GeoPoint,
    from_local_km,
    haversine_km,
    hex_center_local,
    initial_bearing_deg,
    interpolate_great_circle,
    quadrant_of,
)
from .handover_atlas import HandoverEvent, HandoverKind
from .records import TelemetryRecord

CRUISE_ALTITUDE_FT = 41000.0
CLIMB_SECONDS = 1200.0
HYSTERESIS_DB = 1.0
NO_COVERAGE_SNR = -5.0
ROLLOFF_DB = 3.0


class ConfigError(ValueError):
    pass


class Polarization(str, Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class Beam:
    beam_id: str
    satellite_id: str
    center: GeoPoint
    radius_km: float
    polarization: Polarization
    base_snr: float
    mir_cap: float

    def to_json(self) -> dict:
        return {
            "beam_id": self.beam_id, "satellite_id": self.satellite_id, "center": self.center.to_json(),
            "radius_km": self.radius_km, "polarization": self.polarization.value,
            "base_snr": self.base_snr, "mir_cap": self.mir_cap,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Beam":
        return cls(d["beam_id"], d["satellite_id"], GeoPoint.from_json(d["center"]), float(d["radius_km"]),
                   Polarization(d["polarization"]), float(d["base_snr"]), float(d["mir_cap"]))


@dataclass(frozen=True)
class ScoreCoefficients:
    snr_gain: float = 0.8
    snr_midpoint: float = 5.0
    congestion_weight: float = 0.2
    handover_penalty: float = 2.0
    noise_sigma: float = 0.25


@dataclass(frozen=True)
class DegradedZone:
    """Area with extra SNR loss tapering from the centre to the rim (interference, say)."""
    center: GeoPoint
    radius_km: float
    snr_penalty_db: float


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    n_satellites: int = 3
    beams_per_satellite: int = 19
    n_airports: int = 30
    n_aircraft: int = 150
    n_flights: int = 2000
    date_range: tuple[str, str] = ("2024-01-01", "2024-10-31")
    cruise_speed: float = 900.0
    sample_period: int = 30
    score_coefficients: ScoreCoefficients = ScoreCoefficients()
    service_box: tuple[float, float, float, float] = (26.0, 48.0, -122.0, -72.0)
    coverage_latitude: float = 37.0
    beam_radius_km: float = 450.0
    min_leg_km: float = 400.0
    degraded_terminal_fraction: float = 0.15
    degraded_terminal_db: float = 6.0
    beam_load_max: float = 0.1
    diurnal_load: float = 0.45
    device_load: float = 0.45
    degraded_zones: tuple[DegradedZone, ...] = (
        DegradedZone(GeoPoint(38.5, -97.5), 250.0, 10.0),
    )

    def __post_init__(self):
        for name in ("n_satellites", "beams_per_satellite", "n_airports", "n_aircraft", "n_flights"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_airports < 2:
            raise ConfigError("n_airports must be >= 2")
        start, end = self.date_range
        if _day_epoch(end) < _day_epoch(start):
            raise ConfigError("date_range is empty")
        if self.cruise_speed <= 0 or self.sample_period <= 0 or self.beam_radius_km <= 0:
            raise ConfigError("cruise_speed, sample_period and beam_radius_km must be positive")

    @property
    def epoch_range(self) -> tuple[int, int]:
        return _day_epoch(self.date_range[0]), _day_epoch(self.date_range[1]) + 86400

    def to_json(self) -> dict:
        d = asdict(self)
        d["date_range"] = list(self.date_range)
        d["service_box"] = list(self.service_box)
        d["degraded_zones"] = [
            {"center": z.center.to_json(), "radius_km": z.radius_km, "snr_penalty_db": z.snr_penalty_db}
            for z in self.degraded_zones
        ]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "score_coefficients" in d:
                sc = d["score_coefficients"]
                d["score_coefficients"] = ScoreCoefficients(**sc) if isinstance(sc, dict) else ScoreCoefficients(*sc)
            if "date_range" in d:
                d["date_range"] = tuple(d["date_range"])
            if "service_box" in d:
                d["service_box"] = tuple(float(x) for x in d["service_box"])
            if "degraded_zones" in d:
                d["degraded_zones"] = tuple(
                    DegradedZone(GeoPoint.from_json(z["center"]), float(z["radius_km"]), float(z["snr_penalty_db"]))
                    for z in d["degraded_zones"]
                )
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None


def _day_epoch(s: str) -> int:
    return calendar.timegm(date.fromisoformat(s).timetuple())


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return ScenarioConfig.from_json(doc)


# -------------------------------------------------------------- constellation

_HEX_DIRECTIONS = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]


def hex_ring_order(count: int) -> list[tuple[int, int, int, int]]:
    """First `count` axial cells in ring order: (q, r, ring, index_in_ring)."""
    cells = [(0, 0, 0, 0)]
    ring = 1
    while len(cells) < count:
        q, r = -ring, ring  # start at direction 4 scaled by ring
        idx = 0
        for dq, dr in _HEX_DIRECTIONS:
            for _ in range(ring):
                cells.append((q, r, ring, idx))
                q, r = q + dq, r + dr
                idx += 1
        ring += 1
    return cells[:count]


def satellite_longitudes(config: ScenarioConfig) -> list[float]:
    _, _, lon_min, lon_max = config.service_box
    span = lon_max - lon_min
    return [lon_min + (i + 0.5) * span / config.n_satellites for i in range(config.n_satellites)]


def generate_constellation(config: ScenarioConfig) -> list[Beam]:
    """Hex-packed beams around each satellite's aim point.

    Beam centres sit on a hex lattice with spacing sqrt(3) * radius so the
    footprints cover the ring area without gaps. Polarization alternates
    along each ring (ring sizes are even, so the alternation closes).
    """
    rng = np.random.default_rng([config.seed, 0])
    beams = []
    R = config.beam_radius_km
    for s, lon in enumerate(satellite_longitudes(config)):
        sat_id = f"S{s}"
        aim = GeoPoint(config.coverage_latitude, lon)
        for b, (q, r, ring, idx) in enumerate(hex_ring_order(config.beams_per_satellite)):
            x, y = hex_center_local(q, r, R)
            center = from_local_km(x, y, aim) if ring else aim
            pol = Polarization.A if idx % 2 == 0 else Polarization.B
            base_snr = float(np.round(rng.uniform(10.0, 14.0), 3))
            mir_cap = float(rng.choice([10.0, 15.0, 20.0]))
            beams.append(Beam(f"{sat_id}B{b:02d}", sat_id, center, R, pol, base_snr, mir_cap))
    return beams


def generate_airports(config: ScenarioConfig) -> dict[str, GeoPoint]:
    rng = np.random.default_rng([config.seed, 1])
    lat0, lat1, lon0, lon1 = config.service_box
    airports: dict[str, GeoPoint] = {}
    attempts = 0
    while len(airports) < config.n_airports:
        p = GeoPoint(float(np.round(rng.uniform(lat0, lat1), 4)), float(np.round(rng.uniform(lon0, lon1), 4)))
        attempts += 1
        if attempts < 10000 and any(haversine_km(p, a) < 150.0 for a in airports.values()):
            continue
        airports[f"AP{len(airports):02d}"] = p
    return airports


# ------------------------------------------------------------------ link model

def score_oracle(snr: float, congestion: float, in_handover: bool, rng: np.random.Generator | None,
                 coefficients: ScoreCoefficients = ScoreCoefficients()) -> int:
    c = coefficients
    sig = 1.0 / (1.0 + math.exp(-c.snr_gain * (snr - c.snr_midpoint)))
    raw = 1.0 + 9.0 * sig - c.congestion_weight * congestion * 9.0
    if in_handover:
        raw -= c.handover_penalty
    if rng is not None and c.noise_sigma > 0:
        raw += rng.normal(0.0, c.noise_sigma)
    return int(min(10, max(1, round(raw))))


def _beam_congestion_base(beam: Beam, seed: int, high: float) -> float:
    # stable per-beam offset derived from the seed and beam id
    h = sum(ord(ch) * (i + 1) for i, ch in enumerate(beam.beam_id))
    return float(np.random.default_rng([seed, 2, h]).uniform(0.0, high))


@dataclass
class LinkModel:
    """Everything needed to evaluate beam SNR along a trajectory."""
    beams: list[Beam]
    config: ScenarioConfig
    congestion_base: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self._lat = np.radians([b.center.latitude for b in self.beams])
        self._lon = np.radians([b.center.longitude for b in self.beams])
        self._radius = np.array([b.radius_km for b in self.beams])
        self._base = np.array([b.base_snr for b in self.beams])
        if not self.congestion_base:
            self.congestion_base = {b.beam_id: _beam_congestion_base(b, self.config.seed, self.config.beam_load_max) for b in self.beams}
        self._cbase = np.array([self.congestion_base[b.beam_id] for b in self.beams])

    def distances(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        """Great-circle km from each position (rows) to each beam centre (cols)."""
        la = np.radians(lat)[:, None]
        lo = np.radians(lon)[:, None]
        h = np.sin((self._lat - la) / 2) ** 2 + np.cos(la) * np.cos(self._lat) * np.sin((self._lon - lo) / 2) ** 2
        return 2.0 * 6371.0 * np.arcsin(np.minimum(1.0, np.sqrt(h)))

    def zone_penalty(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        pen = np.zeros(len(lat))
        for z in self.config.degraded_zones:
            la, lo = np.radians(lat), np.radians(lon)
            zl, zo = math.radians(z.center.latitude), math.radians(z.center.longitude)
            h = np.sin((la - zl) / 2) ** 2 + np.cos(la) * math.cos(zl) * np.sin((lo - zo) / 2) ** 2
            d = 2.0 * 6371.0 * np.arcsin(np.minimum(1.0, np.sqrt(h)))
            pen += z.snr_penalty_db * np.clip(1.0 - (d / z.radius_km) ** 2, 0.0, None)
        return pen

    def snr_matrix(self, lat: np.ndarray, lon: np.ndarray, utc_seconds: np.ndarray, devices: int,
                   terminal_offset: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Noise-free SNR, congestion and coverage mask, shape (positions, beams)."""
        d = self.distances(lat, lon)
        covered = d <= self._radius
        local_hour = ((utc_seconds / 3600.0) + lon / 15.0) % 24.0
        # demand follows the local day; onboard devices only add load while it is busy
        daytime = np.maximum(0.0, np.sin(2.0 * np.pi * (local_hour - 6.0) / 24.0))
        demand = daytime * (self.config.diurnal_load + self.config.device_load * min(1.0, devices / 30.0))
        cong = np.clip(self._cbase[None, :] + demand[:, None], 0.0, 1.0)
        snr = (self._base[None, :] - ROLLOFF_DB * (d / self._radius) ** 2 - cong + terminal_offset
               - self.zone_penalty(lat, lon)[:, None])
        return snr, cong, covered


def select_beams(snr: np.ndarray, covered: np.ndarray) -> list[int | None]:
    """Serving beam per position: best covering beam, with hysteresis against ping-pong."""
    out: list[int | None] = []
    current: int | None = None
    for k in range(snr.shape[0]):
        cand = np.flatnonzero(covered[k])
        if cand.size == 0:
            current = None
        else:
            best = int(cand[np.argmax(snr[k, cand])])
            if current is None or not covered[k, current] or snr[k, best] - snr[k, current] > HYSTERESIS_DB:
                current = best
        out.append(current)
    return out


def handover_kind(prev: Beam, cur: Beam) -> HandoverKind:
    if prev.satellite_id != cur.satellite_id:
        return HandoverKind.SATELLITE
    if prev.polarization != cur.polarization:
        return HandoverKind.BREAK_BEFORE_MAKE
    return HandoverKind.MAKE_BEFORE_BREAK


# --------------------------------------------------------------------- flights

def flight_sample_times(distance_km: float, config: ScenarioConfig) -> np.ndarray:
    """Offsets (s) of every telemetry sample; the last lies within one period of arrival."""
    duration = distance_km / config.cruise_speed * 3600.0
    n = int(math.floor(duration / config.sample_period)) + 1
    return np.arange(n, dtype=np.int64) * config.sample_period


def _altitude(t: float, duration: float) -> float:
    climb = min(1.0, t / CLIMB_SECONDS)
    descent = min(1.0, max(0.0, duration - t) / CLIMB_SECONDS)
    return round(CRUISE_ALTITUDE_FT * min(climb, descent), 1)


@dataclass
class Aircraft:
    tail_id: str
    terminal_offset_db: float
    mean_devices: float


def generate_flight(config: ScenarioConfig, origin: GeoPoint, dest: GeoPoint, departure: int, *,
                    link: LinkModel | None = None, aircraft: Aircraft | None = None,
                    flight_id: str = "F0", origin_code: str = "ORIG", dest_code: str = "DEST",
                    rng: np.random.Generator | None = None) -> list[TelemetryRecord]:
    """30-second telemetry along the great circle from origin to dest."""
    if origin == dest:
        raise ValueError("origin and destination coincide")
    if link is None:
        link = LinkModel(generate_constellation(config), config)
    if rng is None:
        rng = np.random.default_rng([config.seed, 3, departure])
    if aircraft is None:
        aircraft = Aircraft("N0", 0.0, 8.0)
    coeff = config.score_coefficients
    dist = haversine_km(origin, dest)
    offsets = flight_sample_times(dist, config)
    duration = dist / config.cruise_speed * 3600.0
    pts = [interpolate_great_circle(origin, dest, min(1.0, t / duration)) for t in offsets]
    lat = np.array([p.latitude for p in pts])
    lon = np.array([p.longitude for p in pts])
    times = departure + offsets
    devices = int(rng.poisson(aircraft.mean_devices))
    snr, cong, covered = link.snr_matrix(lat, lon, times.astype(float), devices, aircraft.terminal_offset_db)
    serving = select_beams(snr, covered)
    noise = rng.normal(0.0, 0.5, size=len(pts))

    records = []
    prev: int | None = None
    for k, p in enumerate(pts):
        b = serving[k]
        if b is None:
            rec_snr, rec_mir, score, sat_id, beam_id = NO_COVERAGE_SNR, 0.0, 1, None, None
        else:
            beam = link.beams[b]
            in_ho = prev is not None and prev != b
            rec_snr = float(snr[k, b] + noise[k])
            c = float(cong[k, b])
            sig = 1.0 / (1.0 + math.exp(-0.5 * (rec_snr - coeff.snr_midpoint)))
            rec_mir = beam.mir_cap * (1.0 - 0.5 * c) * sig
            score = score_oracle(rec_snr, c, in_ho, rng, coeff)
            sat_id, beam_id = beam.satellite_id, beam.beam_id
        records.append(TelemetryRecord(
            flight_id=flight_id,
            timestamp=int(times[k]),
            tail_id=aircraft.tail_id,
            origin_airport=origin_code,
            destination_airport=dest_code,
            position=p,
            altitude=_altitude(float(offsets[k]), duration),
            satellite_id=sat_id,
            beam_id=beam_id,
            snr=round(rec_snr, 4),
            mir=round(rec_mir, 4),
            connected_devices=devices,
            score=score,
        ))
        prev = b
    return records


def extract_handover_events(records: Sequence[TelemetryRecord], beams: dict[str, Beam]) -> list[HandoverEvent]:
    """One event per change of serving beam between consecutive covered samples."""
    events = []
    for prev, cur in zip(records, records[1:]):
        if prev.beam_id is None or cur.beam_id is None or prev.beam_id == cur.beam_id:
            continue
        if prev.position == cur.position:
            continue
        heading = initial_bearing_deg(prev.position, cur.position)
        events.append(HandoverEvent(cur.position, quadrant_of(heading),
                                    handover_kind(beams[prev.beam_id], beams[cur.beam_id]),
                                    cur.timestamp, cur.flight_id))
    return events


@dataclass
class Scenario:
    config: ScenarioConfig
    beams: list[Beam]
    airports: dict[str, GeoPoint]
    aircraft: list[Aircraft]
    records: list[TelemetryRecord]
    events: list[HandoverEvent]

    @property
    def n_flights(self) -> int:
        return len({r.flight_id for r in self.records})


def generate_fleet(config: ScenarioConfig) -> list[Aircraft]:
    rng = np.random.default_rng([config.seed, 4])
    fleet = []
    for i in range(config.n_aircraft):
        degraded = rng.random() < config.degraded_terminal_fraction
        offset = -config.degraded_terminal_db if degraded else 0.0
        fleet.append(Aircraft(f"N{100 + i}", offset, float(np.round(rng.uniform(2.0, 25.0), 2))))
    return fleet


def _schedule(config: ScenarioConfig, airports: dict[str, GeoPoint], fleet: list[Aircraft]):
    rng = np.random.default_rng([config.seed, 5])
    start, end = config.epoch_range
    codes = sorted(airports)
    per_tail = [config.n_flights // len(fleet) + (1 if i < config.n_flights % len(fleet) else 0)
                for i in range(len(fleet))]
    legs = []
    for ac, m in zip(fleet, per_tail):
        if m == 0:
            continue
        here = codes[int(rng.integers(len(codes)))]
        departures = np.sort(rng.integers(start, end, size=m))
        ready = start
        for dep in departures:
            choices = [c for c in codes if c != here and haversine_km(airports[c], airports[here]) >= config.min_leg_km]
            if not choices:
                choices = [c for c in codes if c != here]
            dest = choices[int(rng.integers(len(choices)))]
            dep = max(int(dep), ready)
            dist = haversine_km(airports[here], airports[dest])
            arrival = dep + int(flight_sample_times(dist, config)[-1])
            legs.append((dep, ac, here, dest))
            ready = arrival + 3600
            here = dest
    legs.sort(key=lambda leg: (leg[0], leg[1].tail_id))
    return legs


def generate_scenario(config: ScenarioConfig) -> Scenario:
    beams = generate_constellation(config)
    link = LinkModel(beams, config)
    airports = generate_airports(config)
    fleet = generate_fleet(config)
    by_id = {b.beam_id: b for b in beams}
    records: list[TelemetryRecord] = []
    events: list[HandoverEvent] = []
    for i, (dep, ac, o, d) in enumerate(_schedule(config, airports, fleet)):
        fid = f"F{i:06d}"
        recs = generate_flight(config, airports[o], airports[d], dep, link=link, aircraft=ac, flight_id=fid,
                               origin_code=o, dest_code=d, rng=np.random.default_rng([config.seed, 6, i]))
        records.extend(recs)
        events.extend(extract_handover_events(recs, by_id))
    return Scenario(config, beams, airports, fleet, records, events)


def write_scenario(scenario: Scenario, out_dir: str | Path) -> dict[str, Path]:
    from .records import write_records

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.jsonl",
        "events": out / "events.jsonl",
        "beams": out / "beams.json",
        "airports": out / "airports.json",
        "config": out / "scenario.json",
    }
    write_records(scenario.records, paths["records"])
    with open(paths["events"], "w") as fh:
        for ev in scenario.events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")
    paths["beams"].write_text(json.dumps([b.to_json() for b in scenario.beams], indent=1, sort_keys=True) + "\n")
    paths["airports"].write_text(
        json.dumps({k: v.to_json() for k, v in scenario.airports.items()}, indent=1, sort_keys=True) + "\n")
    paths["config"].write_text(json.dumps(scenario.config.to_json(), indent=1, sort_keys=True) + "\n")
    return paths


def load_beams(path: str | Path) -> list[Beam]:
    return [Beam.from_json(d) for d in json.loads(Path(path).read_text())]


def read_events(path: str | Path) -> list[HandoverEvent]:
    events = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(HandoverEvent.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"events line {line_no}: {exc}") from None
    return events
