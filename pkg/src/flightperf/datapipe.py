"""Feature engineering: resampling, calendar and path features, encodings,
normalization, one-hot labels and the train/validation/test split."""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

import numpy as np

from .geodesy import (
    CoincidentPoints,
    cyclic_encode,
    haversine_km,
    initial_bearing_deg,
    quadrant_of,
)
from .handover_atlas import AtlasQuery, HandoverAtlas, HandoverKind
from .performance_grid import AircraftStats, PerformanceGrid, query_cell
from .records import N_CLASSES, TelemetryRecord

RESAMPLE_SECONDS = 600
N_FEATURES = 36

FEATURE_NAMES = (
    "year", "month", "day", "hour", "minute",
    "season_index", "holiday_index", "weekend_index",
    "tail_code", "destination_code", "departure_code",
    "lon_sin", "lon_cos", "lat_sin", "lat_cos",
    "altitude", "heading",
    "dist_since_start", "time_since_start", "dist_to_dest", "time_to_dest",
    "avg_snr", "avg_mir", "avg_score", "avg_devices",
    "satellite_code", "beam_code",
    "p_sat_handover", "p_mbb_handover", "p_bbb_handover",
    "aircraft_recent_score",
    "reserved_0", "reserved_1", "reserved_2", "reserved_3", "reserved_4",
)
assert len(FEATURE_NAMES) == N_FEATURES
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

T = TypeVar("T")


class TooShortFlight(ValueError):
    pass


class TooFewFlights(ValueError):
    pass


# ------------------------------------------------------------------ resample

def resample_10min(records: Sequence[TelemetryRecord], interval: int = RESAMPLE_SECONDS) -> list[TelemetryRecord]:
    """Keep the first record, each record >= `interval` s after the last kept one, and the last record."""
    if not records:
        return []
    kept = [records[0]]
    for rec in records[1:]:
        if rec.timestamp - kept[-1].timestamp >= interval:
            kept.append(rec)
    if kept[-1] is not records[-1]:
        kept.append(records[-1])
    return kept


# ------------------------------------------------------------------ calendar

def _nth_weekday(year: int, month: int, weekday: int, n: int) -> date:
    d = date(year, month, 1)
    d += timedelta(days=(weekday - d.weekday()) % 7)
    return d + timedelta(weeks=n - 1)


def _last_weekday(year: int, month: int, weekday: int) -> date:
    d = date(year + (month == 12), month % 12 + 1, 1) - timedelta(days=1)
    return d - timedelta(days=(d.weekday() - weekday) % 7)


def us_federal_holidays(years: Iterable[int]) -> frozenset[date]:
    days = set()
    for y in years:
        days.update({
            date(y, 1, 1),
            _nth_weekday(y, 1, 0, 3),    # MLK day
            _nth_weekday(y, 2, 0, 3),    # Presidents day
            _last_weekday(y, 5, 0),      # Memorial day
            date(y, 6, 19),
            date(y, 7, 4),
            _nth_weekday(y, 9, 0, 1),    # Labor day
            _nth_weekday(y, 10, 0, 2),   # Columbus day
            date(y, 11, 11),
            _nth_weekday(y, 11, 3, 4),   # Thanksgiving
            date(y, 12, 25),
        })
    return frozenset(days)


DEFAULT_HOLIDAYS = us_federal_holidays(range(2020, 2031))


def season_index(month: int) -> int:
    """Meteorological seasons: 0 = Dec-Feb, 1 = Mar-May, 2 = Jun-Aug, 3 = Sep-Nov."""
    return (month % 12) // 3


def calendar_features(timestamp: int, holidays: frozenset[date] | set[date] = DEFAULT_HOLIDAYS):
    dt = datetime.fromtimestamp(timestamp, tz=timezone.utc)
    return (
        dt.year, dt.month, dt.day, dt.hour, dt.minute,
        season_index(dt.month),
        int(dt.date() in holidays),
        int(dt.weekday() >= 5),
    )


# --------------------------------------------------------------------- vocab

@dataclass
class Vocab:
    tails: dict[str, int]
    airports: dict[str, int]
    satellites: dict[str, int]
    beams: dict[str, int]

    @staticmethod
    def encode(table: dict[str, int], value: str | None) -> int:
        if value is None:
            return 0
        return table.get(value, 0)

    def to_json(self) -> dict:
        return {"tails": self.tails, "airports": self.airports, "satellites": self.satellites, "beams": self.beams}

    @classmethod
    def from_json(cls, d: dict) -> "Vocab":
        return cls(dict(d["tails"]), dict(d["airports"]), dict(d["satellites"]), dict(d["beams"]))


def _add(table: dict[str, int], value: str | None) -> None:
    if value is not None and value not in table:
        table[value] = len(table) + 1


def build_vocab(records: Iterable[TelemetryRecord]) -> Vocab:
    """Codes 1, 2, ... in first-seen order; 0 is reserved for unknown values."""
    v = Vocab({}, {}, {}, {})
    for rec in records:
        _add(v.tails, rec.tail_id)
        _add(v.airports, rec.origin_airport)
        _add(v.airports, rec.destination_airport)
        _add(v.satellites, rec.satellite_id)
        _add(v.beams, rec.beam_id)
    return v


def encode_categorical(table: dict[str, int], value: str | None) -> int:
    return Vocab.encode(table, value)


# -------------------------------------------------------------- featurization

@dataclass
class FlightSequence:
    flight_id: str
    inputs: np.ndarray   # (T, 36)
    labels: np.ndarray   # (T, 10) one-hot

    @property
    def length(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def scores(self) -> np.ndarray:
        return self.labels.argmax(axis=1) + 1


def one_hot(scores: Sequence[int]) -> np.ndarray:
    out = np.zeros((len(scores), N_CLASSES))
    out[np.arange(len(scores)), np.asarray(scores, dtype=int) - 1] = 1.0
    return out


def _headings(records: Sequence[TelemetryRecord]) -> list[float]:
    out: list[float] = []
    for a, b in zip(records, records[1:]):
        try:
            out.append(initial_bearing_deg(a.position, b.position))
        except CoincidentPoints:
            out.append(out[-1] if out else 0.0)
    out.append(out[-1])
    return out


_KIND_COLUMNS = (
    (HandoverKind.SATELLITE, "p_sat_handover"),
    (HandoverKind.MAKE_BEFORE_BREAK, "p_mbb_handover"),
    (HandoverKind.BREAK_BEFORE_MAKE, "p_bbb_handover"),
)


def featurize_flight(records: Sequence[TelemetryRecord], atlas: HandoverAtlas | AtlasQuery,
                     grid: PerformanceGrid, aircraft: AircraftStats, vocab: Vocab,
                     holidays: frozenset[date] | set[date] = DEFAULT_HOLIDAYS) -> FlightSequence:
    """Unnormalized (T, 36) inputs and one-hot labels for one resampled flight."""
    if len(records) < 2:
        raise TooShortFlight(f"flight needs >= 2 records, got {len(records)}")
    query = atlas if isinstance(atlas, AtlasQuery) else AtlasQuery(atlas)
    n = len(records)
    X = np.zeros((n, N_FEATURES))
    col = FEATURE_INDEX

    steps = [0.0] + [haversine_km(a.position, b.position) for a, b in zip(records, records[1:])]
    cum = np.cumsum(steps)
    total_km = float(cum[-1])
    t0, t_end = records[0].timestamp, records[-1].timestamp
    headings = _headings(records)

    for t, rec in enumerate(records):
        row = X[t]
        (row[col["year"]], row[col["month"]], row[col["day"]], row[col["hour"]], row[col["minute"]],
         row[col["season_index"]], row[col["holiday_index"]], row[col["weekend_index"]]) = \
            calendar_features(rec.timestamp, holidays)
        row[col["tail_code"]] = vocab.encode(vocab.tails, rec.tail_id)
        row[col["destination_code"]] = vocab.encode(vocab.airports, rec.destination_airport)
        row[col["departure_code"]] = vocab.encode(vocab.airports, rec.origin_airport)
        row[col["lon_sin"]], row[col["lon_cos"]] = cyclic_encode(rec.position.longitude, 360.0)
        row[col["lat_sin"]], row[col["lat_cos"]] = cyclic_encode(rec.position.latitude, 360.0)
        row[col["altitude"]] = rec.altitude
        row[col["heading"]] = headings[t]
        row[col["dist_since_start"]] = cum[t]
        row[col["time_since_start"]] = (rec.timestamp - t0) / 60.0
        row[col["dist_to_dest"]] = total_km - cum[t]
        row[col["time_to_dest"]] = (t_end - rec.timestamp) / 60.0
        cell = query_cell(grid, rec.position, rec.beam_id)
        row[col["avg_snr"]] = cell.mean_snr
        row[col["avg_mir"]] = cell.mean_mir
        row[col["avg_score"]] = cell.mean_score
        row[col["avg_devices"]] = aircraft.mean_recent_devices
        row[col["satellite_code"]] = vocab.encode(vocab.satellites, rec.satellite_id)
        row[col["beam_code"]] = vocab.encode(vocab.beams, rec.beam_id)
        quad = quadrant_of(headings[t])
        for kind, name in _KIND_COLUMNS:
            row[col[name]] = query.probability(rec.position, quad, kind)
        row[col["aircraft_recent_score"]] = aircraft.mean_recent_score
    # the last step's distance-to-go is exactly zero by construction
    X[-1, col["dist_to_dest"]] = 0.0
    return FlightSequence(records[0].flight_id, X, one_hot([r.score for r in records]))


# ------------------------------------------------------------- normalization

@dataclass
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_json(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist(), "features": list(FEATURE_NAMES)}

    @classmethod
    def from_json(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_minmax(train: Sequence[FlightSequence]) -> NormalizationStats:
    if not train:
        raise ValueError("cannot fit normalization on an empty split")
    X = np.concatenate([s.inputs for s in train], axis=0)
    return NormalizationStats(X.min(axis=0), X.max(axis=0))


def normalize_array(stats: NormalizationStats, X: np.ndarray) -> np.ndarray:
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - stats.minimum) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def apply_minmax(stats: NormalizationStats, seq: FlightSequence) -> FlightSequence:
    return FlightSequence(seq.flight_id, normalize_array(stats, seq.inputs), seq.labels)


# --------------------------------------------------------------------- split

def split_dataset(items: Sequence[T], seed: int) -> tuple[list[T], list[T], list[T]]:
    """Shuffle and cut into floor(0.8n) / floor(0.1n) / remainder."""
    n = len(items)
    if n < 10:
        raise TooFewFlights(f"need >= 10 flights to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


# ----------------------------------------------------------------- sequences

def sequences_to_json(seqs: Sequence[FlightSequence]) -> list[dict]:
    return [{"flight_id": s.flight_id, "inputs": s.inputs.tolist(), "scores": s.scores.tolist()} for s in seqs]


def sequences_from_json(doc: list[dict]) -> list[FlightSequence]:
    return [FlightSequence(d["flight_id"], np.asarray(d["inputs"], dtype=float).reshape(-1, N_FEATURES),
                           one_hot(d["scores"])) for d in doc]


def save_sequences(seqs: Sequence[FlightSequence], path: str | Path) -> None:
    Path(path).write_text(json.dumps(sequences_to_json(seqs)) + "\n")


def load_sequences(path: str | Path) -> list[FlightSequence]:
    return sequences_from_json(json.loads(Path(path).read_text()))
