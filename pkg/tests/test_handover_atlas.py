import json
import math

import numpy as np
import pytest

from flightperf.geodesy import GeoPoint, HeadingQuadrant, destination_point, haversine_km, to_local_km
from flightperf.handover_atlas import (
    NOISE,
    AtlasQuery,
    ContourConfig,
    ContourRegion,
    DegenerateCluster,
    EmptyPartition,
    HandoverAtlas,
    HandoverEvent,
    HandoverKind,
    MalformedAtlasFile,
    atlas_from_json,
    atlas_to_json,
    build_contoured_regions,
    compute_step,
    convex_hull,
    dbscan,
    epsilon_schedule,
    load_atlas,
    point_in_ring,
    query_probability,
    save_atlas,
    subtract_inner,
)

from .oracles import brute_dbscan, brute_hull_indices, ray_cast, random_blob_points

MBB = HandoverKind.MAKE_BEFORE_BREAK


def events_at(points, kind=MBB, quad=HeadingQuadrant.NE):
    return [HandoverEvent(p, quad, kind, 1_700_000_000 + i) for i, p in enumerate(points)]


def blob(center, n, spread_km, rng):
    return [destination_point(center, rng.uniform(0, 360), spread_km * math.sqrt(rng.uniform())) for _ in range(n)]


# -------------------------------------------------------------------- dbscan

def test_dbscan_empty_and_coincident():
    assert dbscan([], 1.0, 3) == []
    p = GeoPoint(40, -100)
    assert dbscan([p] * 5, 1.0, 3) == [0] * 5


def test_dbscan_noise_only():
    pts = [GeoPoint(30 + 3 * i, -100) for i in range(6)]
    assert dbscan(pts, 10.0, 2) == [NOISE] * 6


def test_dbscan_rejects_bad_parameters():
    with pytest.raises(ValueError):
        dbscan([GeoPoint(0, 0)], 0.0, 1)


@pytest.mark.parametrize("seed", range(12))
def test_dbscan_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = random_blob_points(rng, int(rng.integers(20, 201)))
    eps = float(rng.uniform(15, 60))
    ms = int(rng.integers(2, 8))
    assert dbscan(pts, eps, ms) == brute_dbscan(pts, eps, ms)


def test_dbscan_inclusive_radius():
    a = GeoPoint(0, 0)
    b = destination_point(a, 90, 10.0)
    eps = haversine_km(a, b)
    assert dbscan([a, b], eps, 2) == [0, 0]


# ---------------------------------------------------------------- schedule

@pytest.mark.parametrize("layers,lo,hi,step", [(4, 10, 50, 10.0), (1, 5, 5, 0.0), (3, 2, 20, 6.0)])
def test_compute_step(layers, lo, hi, step):
    assert compute_step(ContourConfig(layers, lo, hi)) == pytest.approx(step)


def test_epsilon_schedule_monotone_and_floored():
    cfg = ContourConfig(num_layers=6, min_distance=10, max_distance=50, eps1=40)
    eps = epsilon_schedule(cfg)
    assert eps[0] == 40
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert min(eps) >= 10
    assert eps[-1] == 10


def test_config_validation():
    with pytest.raises(ValueError):
        ContourConfig(num_layers=0)
    with pytest.raises(ValueError):
        ContourConfig(min_distance=20, max_distance=10)


# -------------------------------------------------------------------- hull

def test_hull_square_with_interior_point():
    o = GeoPoint(40, -100)
    sq = [destination_point(o, b, 50) for b in (45, 135, 225, 315)]
    ring = convex_hull(sq + [o])
    assert set(ring) == set(sq)
    xy = [to_local_km(p, o) for p in ring]
    area = sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(xy, xy[1:] + xy[:1]))
    assert area > 0


def test_hull_collinear_is_degenerate():
    pts = [GeoPoint(0, float(i)) for i in range(5)]
    with pytest.raises(DegenerateCluster):
        convex_hull(pts)
    with pytest.raises(DegenerateCluster):
        convex_hull([GeoPoint(1, 1), GeoPoint(2, 2)])


@pytest.mark.parametrize("seed", range(5))
def test_hull_matches_all_pairs_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    o = GeoPoint(35, -95)
    pts = blob(o, 100, 200, rng)
    ring = convex_hull(pts)
    expected = {pts[i] for i in brute_hull_indices([to_local_km(p, o) for p in pts])}
    assert set(ring) == expected


# ------------------------------------------------------------- containment

def _square(center, half_km):
    return tuple(destination_point(center, b, half_km * math.sqrt(2)) for b in (225, 135, 45, 315))


def test_subtract_inner_identity_and_annulus():
    c = GeoPoint(40, -100)
    outer = ContourRegion(1, None, 0, _square(c, 100), [], 10, 0.5)
    same = subtract_inner(outer, [])
    assert same.holes == [] and same.outer_ring == outer.outer_ring
    ann = subtract_inner(outer, [_square(c, 30)])
    assert not ann.contains(c)
    near_corner = destination_point(c, 45, 100 * math.sqrt(2) - 5)
    assert ann.contains(near_corner)


def test_subtract_inner_clips_escaping_ring(caplog):
    c = GeoPoint(40, -100)
    outer = ContourRegion(1, None, 0, _square(c, 100), [], 10, 0.5)
    shifted = _square(destination_point(c, 90, 90), 30)
    out = subtract_inner(outer, [shifted])
    assert len(out.holes) == 1
    assert all(point_in_ring(v, outer.outer_ring) for v in out.holes[0])
    assert "escapes" in caplog.text


def test_region_contains_matches_ray_casting():
    rng = np.random.default_rng(5)
    c = GeoPoint(38, -97)
    outer = convex_hull(blob(c, 60, 300, rng))
    holes = [convex_hull(blob(destination_point(c, b, 120), 30, 40, rng)) for b in (0, 180)]
    reg = subtract_inner(ContourRegion(0, None, 0, outer, [], 1, 1.0), holes)
    for _ in range(1000):
        p = destination_point(c, rng.uniform(0, 360), 350 * math.sqrt(rng.uniform()))
        expected = ray_cast(p, outer) and not any(ray_cast(p, h) for h in reg.holes)
        assert reg.contains(p) == expected


# ------------------------------------------------------------ construction

def test_single_blob_nests_children():
    rng = np.random.default_rng(11)
    c = GeoPoint(37, -90)
    pts = blob(c, 50, 25, rng)
    atlas = build_contoured_regions(events_at(pts), ContourConfig(num_layers=2, min_samples=4))
    regs = atlas.partitions[(MBB, HeadingQuadrant.NE)]
    parents = [r for r in regs if r.layer == 0]
    assert len(parents) == 1
    kids = [r for r in regs if r.parent_id == parents[0].region_id]
    assert kids
    for k in kids:
        assert all(point_in_ring(v, parents[0].outer_ring) for v in k.outer_ring)
        assert 0 < k.probability <= 1
    # the densest nested region reports its own stored probability
    deepest = max(regs, key=lambda r: r.layer)
    inside = [p for p in pts if deepest.contains(p)]
    assert inside
    assert query_probability(atlas, inside[0], HeadingQuadrant.NE, MBB) == deepest.probability


def test_two_blobs_two_parents_with_count_shares():
    rng = np.random.default_rng(12)
    a = GeoPoint(40, -100)
    b = destination_point(a, 90, 200)
    pts = blob(a, 30, 15, rng) + blob(b, 10, 15, rng)
    atlas = build_contoured_regions(events_at(pts), ContourConfig(num_layers=1, max_distance=50))
    parents = [r for r in atlas.partitions[(MBB, HeadingQuadrant.NE)] if r.layer == 0]
    assert sorted(p.event_count for p in parents) == [10, 30]
    assert sorted(p.probability for p in parents) == pytest.approx([0.25, 0.75])


def test_sparse_noise_gives_no_regions():
    pts = [GeoPoint(30 + 2 * i, -120 + 3 * i) for i in range(10)]
    atlas = build_contoured_regions(events_at(pts), ContourConfig())
    assert atlas.partitions[(MBB, HeadingQuadrant.NE)] == []
    assert query_probability(atlas, pts[0], HeadingQuadrant.NE, MBB) == 0.0


def test_no_events_raises():
    with pytest.raises(EmptyPartition):
        build_contoured_regions([], ContourConfig())


def test_probability_is_partitioned_by_heading_and_kind():
    rng = np.random.default_rng(13)
    c = GeoPoint(36, -85)
    atlas = build_contoured_regions(events_at(blob(c, 40, 20, rng)), ContourConfig(num_layers=1))
    assert query_probability(atlas, c, HeadingQuadrant.NE, MBB) > 0
    assert query_probability(atlas, c, HeadingQuadrant.SW, MBB) == 0.0
    assert query_probability(atlas, c, HeadingQuadrant.NE, HandoverKind.SATELLITE) == 0.0


def test_hole_of_child_resolves_to_grandchild():
    # outer 0 -> child 1 -> grandchild 2; a point in the grandchild sits in the child's hole
    c = GeoPoint(40, -100)
    r0 = ContourRegion(0, None, 0, _square(c, 100), [_square(c, 60)], 100, 1.0)
    r1 = ContourRegion(1, 0, 1, _square(c, 60), [_square(c, 20)], 60, 0.6)
    r2 = ContourRegion(2, 1, 2, _square(c, 20), [], 30, 0.5)
    atlas = HandoverAtlas({(MBB, HeadingQuadrant.NE): [r0, r1, r2]}, ContourConfig())
    q = AtlasQuery(atlas)
    for p, expected in [(c, 0.5), (destination_point(c, 0, 40), 0.6), (destination_point(c, 0, 80), 1.0),
                        (destination_point(c, 0, 500), 0.0)]:
        assert query_probability(atlas, p, HeadingQuadrant.NE, MBB) == expected
        assert q.probability(p, HeadingQuadrant.NE, MBB) == expected


def test_atlas_query_matches_plain_query():
    rng = np.random.default_rng(14)
    c = GeoPoint(39, -95)
    pts = blob(c, 120, 80, rng) + blob(destination_point(c, 45, 300), 60, 40, rng)
    atlas = build_contoured_regions(events_at(pts), ContourConfig(min_samples=4))
    q = AtlasQuery(atlas)
    for _ in range(300):
        p = destination_point(c, rng.uniform(0, 360), rng.uniform(0, 500))
        assert q.probability(p, HeadingQuadrant.NE, MBB) == query_probability(atlas, p, HeadingQuadrant.NE, MBB)


# --------------------------------------------------------------------- I/O

def _fixture_atlas():
    rng = np.random.default_rng(12)
    a = GeoPoint(40, -100)
    pts = blob(a, 30, 15, rng) + blob(destination_point(a, 90, 200), 10, 15, rng)
    return build_contoured_regions(events_at(pts), ContourConfig(num_layers=2))


def test_atlas_round_trip(tmp_path):
    atlas = _fixture_atlas()
    path = tmp_path / "atlas.json"
    save_atlas(atlas, path)
    back = load_atlas(path)
    assert atlas_to_json(back) == atlas_to_json(atlas)
    assert back.partitions == atlas.partitions


def test_atlas_build_is_deterministic():
    assert json.dumps(atlas_to_json(_fixture_atlas())) == json.dumps(atlas_to_json(_fixture_atlas()))


def test_truncated_atlas_file(tmp_path):
    path = tmp_path / "atlas.json"
    save_atlas(_fixture_atlas(), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedAtlasFile, match="line"):
        load_atlas(path)


def test_missing_field_is_reported():
    doc = atlas_to_json(_fixture_atlas())
    key = next(iter(doc["partitions"]))
    del doc["partitions"][key][0]["probability"]
    with pytest.raises(MalformedAtlasFile, match="probability"):
        atlas_from_json(doc)


def test_empty_partitions_file(tmp_path):
    atlas = HandoverAtlas({}, ContourConfig())
    path = tmp_path / "empty.json"
    save_atlas(atlas, path)
    assert load_atlas(path).partitions == {}


def test_event_json_round_trip():
    ev = HandoverEvent(GeoPoint(1.5, 2.5), HeadingQuadrant.SW, HandoverKind.BREAK_BEFORE_MAKE, 123, "F1")
    assert HandoverEvent.from_json(ev.to_json()) == ev
