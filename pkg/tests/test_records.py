import json

import numpy as np
import pytest

from flightperf.records import MalformedRecord, TelemetryRecord, group_flights, read_records, write_records

from .factories import random_records, rec


def test_empty_file(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text("")
    assert read_records(p) == []


def test_round_trip_thousand(tmp_path):
    recs = random_records(np.random.default_rng(0), 1000)
    p = tmp_path / "r.jsonl"
    write_records(recs, p)
    assert read_records(p) == recs
    assert len(p.read_text().splitlines()) == 1000


def test_null_beam_round_trip(tmp_path):
    r = rec(beam=None, sat=None, score=1)
    write_records([r], tmp_path / "r.jsonl")
    assert read_records(tmp_path / "r.jsonl") == [r]


def _write_with(tmp_path, line_no, **override):
    lines = [rec(t=i).to_json() for i in range(4)]
    lines[line_no - 1].update(override)
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(json.dumps(d) for d in lines) + "\n")
    return p


def test_score_out_of_range_reports_line(tmp_path):
    with pytest.raises(MalformedRecord) as err:
        read_records(_write_with(tmp_path, 3, score=11))
    assert err.value.line_no == 3


def test_non_integer_score_and_bad_json(tmp_path):
    with pytest.raises(MalformedRecord):
        read_records(_write_with(tmp_path, 1, score=7.5))
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps(rec().to_json()) + "\n{not json\n")
    with pytest.raises(MalformedRecord) as err:
        read_records(p)
    assert err.value.line_no == 2


def test_missing_field(tmp_path):
    d = rec().to_json()
    del d["snr"]
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(MalformedRecord, match="snr"):
        read_records(p)


def test_constructor_invariants():
    with pytest.raises(ValueError):
        rec(score=0)
    with pytest.raises(ValueError):
        rec(devices=-1)
    with pytest.raises(ValueError):
        rec(snr=float("nan"))


def test_group_flights_sorts_by_time():
    recs = [rec(fid="A", t=60), rec(fid="A", t=0), rec(fid="B", t=5)]
    g = group_flights(recs)
    assert list(g) == ["A", "B"]
    assert [r.timestamp for r in g["A"]] == [0, 60]
    assert isinstance(g["B"][0], TelemetryRecord)
