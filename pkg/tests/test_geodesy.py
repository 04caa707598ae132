import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flightperf.geodesy import (
    KM_PER_DEG,
    R_EARTH_KM,
    CoincidentPoints,
    GeoPoint,
    HeadingQuadrant,
    HexIndex,
    PolarRegion,
    cyclic_encode,
    destination_point,
    from_local_km,
    haversine_km,
    hex_center,
    hex_index,
    initial_bearing_deg,
    interpolate_great_circle,
    quadrant_of,
    to_local_km,
)

lats = st.floats(-85, 85)
lons = st.floats(-180, 179.999)
points = st.builds(GeoPoint, lats, lons)


def slc_km(a, b):
    """Spherical law of cosines, an independent distance formula."""
    p1, p2 = math.radians(a.latitude), math.radians(b.latitude)
    dl = math.radians(b.longitude - a.longitude)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return R_EARTH_KM * math.acos(max(-1.0, min(1.0, c)))


def test_geopoint_validates_and_wraps():
    assert GeoPoint(0, 180).longitude == -180.0
    assert GeoPoint(0, 190).longitude == pytest.approx(-170.0)
    with pytest.raises(ValueError):
        GeoPoint(91, 0)
    with pytest.raises(ValueError):
        GeoPoint(float("nan"), 0)


def test_geopoint_json_round_trip():
    p = GeoPoint(12.5, -33.25)
    assert GeoPoint.from_json(p.to_json()) == p


def test_haversine_identity_and_quarter_circle():
    x = GeoPoint(10, 20)
    assert haversine_km(x, x) == 0.0
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 90)) == pytest.approx(math.pi / 2 * 6371.0, abs=0.5)
    assert abs(haversine_km(GeoPoint(0, 0), GeoPoint(0, 90)) - 10007.54) < 0.5


def test_haversine_london_new_york_matches_law_of_cosines():
    a, b = GeoPoint(51.5074, -0.1278), GeoPoint(40.7128, -74.0060)
    assert haversine_km(a, b) == pytest.approx(slc_km(a, b), rel=1e-3)


@settings(max_examples=200, deadline=None)
@given(points, points, points)
def test_haversine_metric_properties(a, b, c):
    ab = haversine_km(a, b)
    assert ab >= 0
    assert ab == pytest.approx(haversine_km(b, a), abs=1e-9)
    assert ab <= haversine_km(a, c) + haversine_km(c, b) + 1e-9


def test_bearing_cardinal_directions():
    assert initial_bearing_deg(GeoPoint(0, 0), GeoPoint(10, 0)) == 0.0
    assert initial_bearing_deg(GeoPoint(0, 0), GeoPoint(0, 10)) == pytest.approx(90.0)
    with pytest.raises(CoincidentPoints):
        initial_bearing_deg(GeoPoint(1, 1), GeoPoint(1, 1))


def test_bearing_matches_small_step_numerical_heading():
    a, b = GeoPoint(35, -100), GeoPoint(36, -99)
    # forward difference: walk a few metres along the great circle, measure the local direction
    c = interpolate_great_circle(a, b, 1e-5)
    dx = math.radians(c.longitude - a.longitude) * math.cos(math.radians(a.latitude))
    dy = math.radians(c.latitude - a.latitude)
    numeric = math.degrees(math.atan2(dx, dy)) % 360
    assert initial_bearing_deg(a, b) == pytest.approx(numeric, abs=0.5)


@pytest.mark.parametrize("bearing,quad", [
    (0.0, HeadingQuadrant.NE), (89.999, HeadingQuadrant.NE), (90.0, HeadingQuadrant.SE),
    (180.0, HeadingQuadrant.SW), (270.0, HeadingQuadrant.NW), (359.9, HeadingQuadrant.NW),
])
def test_quadrant_boundaries(bearing, quad):
    assert quadrant_of(bearing) is quad


@given(st.floats(0, 360, exclude_max=True))
def test_quadrant_partition(b):
    expected = [HeadingQuadrant.NE, HeadingQuadrant.SE, HeadingQuadrant.SW, HeadingQuadrant.NW][int(b // 90)]
    assert quadrant_of(b) is expected


def test_cyclic_encode_reference_angles():
    assert cyclic_encode(0, 360) == (0.0, 1.0)
    s, c = cyclic_encode(180, 360)
    assert abs(s) < 1e-12 and abs(c + 1) < 1e-12
    s, c = cyclic_encode(90, 360)
    assert abs(s - 1) < 1e-12 and abs(c) < 1e-12


@given(st.floats(-1e4, 1e4), st.floats(0.1, 1e3))
def test_cyclic_encode_on_unit_circle(v, period):
    s, c = cyclic_encode(v, period)
    assert abs(s * s + c * c - 1) < 1e-12


def test_local_projection_scale_and_inverse():
    o = GeoPoint(40, -100)
    assert to_local_km(o, o) == (0.0, 0.0)
    x, y = to_local_km(GeoPoint(41, -100), o)
    assert x == 0.0 and abs(y - 111.19) < 0.01
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = destination_point(o, rng.uniform(0, 360), 300.0)
        back = from_local_km(*to_local_km(p, o), o)
        assert haversine_km(p, back) < 1e-3


def test_local_projection_rejects_poles():
    with pytest.raises(PolarRegion):
        to_local_km(GeoPoint(89.5, 0), GeoPoint(60, 0))


def test_hex_origin_cell():
    o = GeoPoint(37, -95)
    assert hex_index(o, o) == HexIndex(0, 0, o)
    assert hex_center(HexIndex(0, 0, o)) == o


def test_hex_cell_contains_point():
    o = GeoPoint(37, -95)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = from_local_km(rng.uniform(-400, 400), rng.uniform(-400, 400), o)
        h = hex_index(p, o, 50.0)
        cx, cy = to_local_km(hex_center(h, 50.0), o)
        px, py = to_local_km(p, o)
        assert math.hypot(px - cx, py - cy) <= 50.0 + 1e-6
        # the equirectangular plane is faithful to ~0.5 % at this scale
        assert haversine_km(p, hex_center(h, 50.0)) <= 50.0 * 1.01


def test_hex_nearby_points_same_or_adjacent():
    o = GeoPoint(30, -80)
    rng = np.random.default_rng(8)
    for _ in range(500):
        p = from_local_km(rng.uniform(-300, 300), rng.uniform(-300, 300), o)
        q = destination_point(p, rng.uniform(0, 360), 1.0)
        a, b = hex_index(p, o), hex_index(q, o)
        dq, dr = b.q - a.q, b.r - a.r
        assert max(abs(dq), abs(dr), abs(dq + dr)) <= 1


def test_hex_center_round_trip_and_spacing():
    o = GeoPoint(35, -90)
    for q in range(-20, 21):
        for r in range(-20, 21):
            h = HexIndex(q, r, o)
            assert hex_index(hex_center(h), o) == h
    a = to_local_km(hex_center(HexIndex(0, 0, o)), o)
    for q, r in [(1, 0), (0, 1), (-1, 1)]:
        b = to_local_km(hex_center(HexIndex(q, r, o)), o)
        assert math.dist(a, b) == pytest.approx(50 * math.sqrt(3), rel=5e-3)


def test_hex_distinct_cells_have_separated_centres():
    o = GeoPoint(33, -100)
    rng = np.random.default_rng(9)
    cells = {hex_index(from_local_km(*rng.uniform(-500, 500, 2), o), o) for _ in range(300)}
    centres = [to_local_km(hex_center(h), o) for h in cells]
    for i in range(len(centres)):
        for j in range(i + 1, len(centres)):
            assert math.dist(centres[i], centres[j]) >= 50 * math.sqrt(3) * (1 - 1e-9)


def test_interpolation_endpoints_and_midpoint():
    a, b = GeoPoint(10, 10), GeoPoint(20, 40)
    assert haversine_km(interpolate_great_circle(a, b, 0.0), a) < 1e-6
    assert haversine_km(interpolate_great_circle(a, b, 1.0), b) < 1e-6
    m = interpolate_great_circle(a, b, 0.5)
    assert haversine_km(a, m) == pytest.approx(haversine_km(m, b), rel=1e-9)


def test_destination_point_distance():
    p = GeoPoint(45, 7)
    q = destination_point(p, 123.0, 777.0)
    assert haversine_km(p, q) == pytest.approx(777.0, rel=1e-9)
    assert initial_bearing_deg(p, q) == pytest.approx(123.0, abs=1e-6)


def test_km_per_degree():
    assert KM_PER_DEG == pytest.approx(111.195, abs=1e-3)
