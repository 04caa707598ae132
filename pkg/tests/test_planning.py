import json

import numpy as np
import pytest

from flightperf.datapipe import FlightSequence, one_hot
from flightperf.geodesy import GeoPoint, haversine_km
from flightperf.planning import (
    FlightPlan,
    PlanError,
    Waypoint,
    load_plans,
    plan_positions,
    plan_records,
    rank_plans,
    trajectory,
)
from flightperf.performance_grid import build_grid

from .factories import rec

A, B = GeoPoint(38.0, -105.0), GeoPoint(38.0, -90.0)


def plan(pid, *mid, dep=1_710_000_000):
    pts = (A, *mid, B)
    return FlightPlan(pid, tuple(Waypoint(p) for p in pts), dep, "N100")


def test_plan_validation():
    with pytest.raises(PlanError):
        FlightPlan("x", (Waypoint(A),), 0, "N1")
    with pytest.raises(PlanError):
        FlightPlan("x", (Waypoint(A), Waypoint(A)), 0, "N1")


def test_trajectory_spacing_and_endpoints():
    p = plan("direct")
    traj = trajectory(p, 900.0)
    total = haversine_km(A, B)
    assert haversine_km(traj[0][1], A) < 1e-6 and haversine_km(traj[-1][1], B) < 1e-6
    assert len(traj) == int(total // 150.0) + 1 + (total % 150.0 > 1e-9)
    gaps = [haversine_km(a[1], b[1]) for a, b in zip(traj, traj[1:])]
    assert np.allclose(gaps[:-1], 150.0, rtol=1e-6) and gaps[-1] <= 150.0 + 1e-6
    assert [t for t, _, _ in traj][:3] == [p.departure_time, p.departure_time + 600, p.departure_time + 1200]


def test_trajectory_follows_waypoints():
    p = plan("dogleg", GeoPoint(33.0, -97.5))
    pos = plan_positions(p)
    assert min(q.latitude for q in pos) == pytest.approx(33.0, abs=0.7)


def test_plan_records_use_busiest_beam():
    grid = build_grid([rec(38.0, -100.0, beam="X", sat="S0")] * 3 + [rec(38.0, -100.0, beam="Y", sat="S1")],
                      anchors={"X": GeoPoint(38.0, -100.0), "Y": GeoPoint(38.0, -100.0)})
    recs = plan_records(plan("direct"), grid)
    near = [r for r in recs if haversine_km(r.position, GeoPoint(38.0, -100.0)) < 30]
    assert near and all(r.beam_id == "X" and r.satellite_id == "S0" for r in near)
    assert all(r.beam_id is None for r in recs if haversine_km(r.position, GeoPoint(38.0, -100.0)) > 120)


def fixed_predictor(table):
    return lambda seqs: [np.array(table[s.flight_id]) for s in seqs]


def test_ranking_order_and_ties():
    plans = [plan("a", GeoPoint(36, -97)), plan("b"), plan("c", GeoPoint(40, -97))]
    seqs = [FlightSequence(p.plan_id, np.zeros((len(plan_positions(p)), 36)), one_hot([1] * len(plan_positions(p))))
            for p in plans]
    scores = {s.flight_id: [9] * s.length for s in seqs}
    scores["a"][3] = 2
    ranked = rank_plans(plans, seqs, fixed_predictor(scores))
    # b and c tie on mean and worst score, so the id decides
    assert [r.plan_id for r in ranked] == ["b", "c", "a"]
    assert ranked[-1].plan_id == "a" and ranked[-1].min_score == 2 and ranked[-1].min_step == 3
    assert [r.rank for r in ranked] == [1, 2, 3]
    scores = {s.flight_id: [5] * s.length for s in seqs}
    assert [r.plan_id for r in rank_plans(plans, seqs, fixed_predictor(scores))] == ["a", "b", "c"]


def test_plans_file(tmp_path):
    p = tmp_path / "plans.json"
    p.write_text(json.dumps([plan("a").to_json(), plan("b", GeoPoint(36, -97)).to_json()]))
    loaded = load_plans(p)
    assert [x.plan_id for x in loaded] == ["a", "b"] and loaded[0] == plan("a")
    p.write_text("[]")
    with pytest.raises(PlanError):
        load_plans(p)
