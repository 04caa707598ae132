"""Preprocessing chain from raw telemetry to a normalized, split dataset bundle."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .datapipe import (
    FlightSequence,
    NormalizationStats,
    Vocab,
    apply_minmax,
    build_vocab,
    featurize_flight,
    fit_minmax,
    load_sequences,
    resample_10min,
    save_sequences,
    split_dataset,
)
from .geodesy import DEFAULT_CELL_RADIUS_KM, GeoPoint
from .handover_atlas import (
    AtlasQuery,
    ContourConfig,
    EmptyPartition,
    HandoverAtlas,
    HandoverEvent,
    build_contoured_regions,
    load_atlas,
    save_atlas,
)
from .performance_grid import (
    AircraftHistory,
    FlightSummary,
    PerformanceGrid,
    build_grid,
    load_grid,
    save_grid,
    summarize_flight,
)
from .records import TelemetryRecord, group_flights, read_records, write_records

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Bundle:
    seed: int
    split_ids: dict[str, list[str]]
    atlas: HandoverAtlas
    grid: PerformanceGrid
    vocab: Vocab
    normalization: NormalizationStats
    summaries: list[FlightSummary]
    sequences: dict[str, list[FlightSequence]]
    test_records: list[list[TelemetryRecord]]   # resampled, aligned with sequences["test"]


def summaries_to_json(summaries: Sequence[FlightSummary]) -> list[dict]:
    return [{"tail_id": s.tail_id, "departure": s.departure, "arrival": s.arrival,
             "mean_score": s.mean_score, "mean_devices": s.mean_devices} for s in summaries]


def summaries_from_json(doc: list[dict]) -> list[FlightSummary]:
    return [FlightSummary(d["tail_id"], int(d["departure"]), int(d["arrival"]),
                          float(d["mean_score"]), float(d["mean_devices"])) for d in doc]


def prepare_bundle(records: Sequence[TelemetryRecord], events: Sequence[HandoverEvent], seed: int = 42,
                   cell_radius_km: float = DEFAULT_CELL_RADIUS_KM,
                   contour: ContourConfig = ContourConfig(),
                   anchors: Mapping[str, GeoPoint] | None = None) -> Bundle:
    """Split flights first, then fit every statistic on the training flights alone.

    The handover atlas, performance grid, vocabularies and min-max ranges only
    see training data; validation and test flights are featurized with them.
    """
    flights = group_flights(records)
    ids = sorted(flights)
    train_ids, val_ids, test_ids = split_dataset(ids, seed)
    split_ids = {"train": sorted(train_ids), "val": sorted(val_ids), "test": sorted(test_ids)}
    train_set = set(train_ids)

    train_records = [r for fid in split_ids["train"] for r in flights[fid]]
    train_events = [e for e in events if e.flight_id is None or e.flight_id in train_set]
    log.info("fitting atlas on %d events, grid on %d records", len(train_events), len(train_records))
    try:
        atlas = build_contoured_regions(train_events, contour)
    except EmptyPartition:
        log.warning("no handover events in the training flights; every handover probability will be 0")
        atlas = HandoverAtlas({}, contour, 0)
    grid = build_grid(train_records, cell_radius_km, anchors)
    vocab = build_vocab(train_records)
    query = AtlasQuery(atlas)

    # last-five-flight statistics draw on every flight that landed before departure
    summaries = sorted((summarize_flight(flights[fid]) for fid in ids), key=lambda s: (s.departure, s.tail_id))
    history = AircraftHistory(summaries)

    raw: dict[str, list[FlightSequence]] = {}
    resampled: dict[str, list[TelemetryRecord]] = {}
    for name in SPLITS:
        raw[name] = []
        for fid in split_ids[name]:
            recs = resample_10min(flights[fid])
            resampled[fid] = recs
            stats = history.stats(recs[0].tail_id, recs[0].timestamp)
            raw[name].append(featurize_flight(recs, query, grid, stats, vocab))
    norm = fit_minmax(raw["train"])
    sequences = {name: [apply_minmax(norm, s) for s in raw[name]] for name in SPLITS}
    return Bundle(seed, split_ids, atlas, grid, vocab, norm, summaries, sequences,
                  [resampled[fid] for fid in split_ids["test"]])


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_bundle(bundle: Bundle, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_atlas(bundle.atlas, out / "atlas.json")
    save_grid(bundle.grid, out / "grid.json")
    _write_json(out / "vocab.json", bundle.vocab.to_json())
    _write_json(out / "normalization.json", bundle.normalization.to_json())
    _write_json(out / "aircraft.json", summaries_to_json(bundle.summaries))
    _write_json(out / "split.json", {"seed": bundle.seed, **bundle.split_ids,
                                     "counts": {k: len(v) for k, v in bundle.split_ids.items()}})
    for name in SPLITS:
        save_sequences(bundle.sequences[name], out / f"sequences_{name}.json")
    write_records([r for recs in bundle.test_records for r in recs], out / "records_test.jsonl")
    return out


def load_bundle(path: str | Path) -> Bundle:
    d = Path(path)
    split = json.loads((d / "split.json").read_text())
    test_flights = group_flights(read_records(d / "records_test.jsonl"))
    return Bundle(
        int(split["seed"]),
        {k: list(split[k]) for k in SPLITS},
        load_atlas(d / "atlas.json"),
        load_grid(d / "grid.json"),
        Vocab.from_json(json.loads((d / "vocab.json").read_text())),
        NormalizationStats.from_json(json.loads((d / "normalization.json").read_text())),
        summaries_from_json(json.loads((d / "aircraft.json").read_text())),
        {name: load_sequences(d / f"sequences_{name}.json") for name in SPLITS},
        [test_flights[fid] for fid in split["test"]],
    )
