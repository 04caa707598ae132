"""Spherical-earth primitives and the hexagonal cell index used for spatial binning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

R_EARTH_KM = 6371.0
KM_PER_DEG = math.pi * R_EARTH_KM / 180.0
DEFAULT_CELL_RADIUS_KM = 50.0
_SQRT3 = math.sqrt(3.0)


class CoincidentPoints(ValueError):
    """Bearing requested between two identical points."""


class PolarRegion(ValueError):
    """Point too close to a pole for the local planar projection."""


def _wrap_lon(lon: float) -> float:
    return (lon + 180.0) % 360.0 - 180.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (math.isfinite(self.latitude) and math.isfinite(self.longitude)):
            raise ValueError(f"non-finite coordinate: {self.latitude}, {self.longitude}")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude < 180.0:
            object.__setattr__(self, "longitude", _wrap_lon(self.longitude))

    def to_json(self) -> dict:
        return {"latitude": self.latitude, "longitude": self.longitude}

    @classmethod
    def from_json(cls, d: dict) -> "GeoPoint":
        return cls(float(d["latitude"]), float(d["longitude"]))


class HeadingQuadrant(str, Enum):
    NE = "NE"
    SE = "SE"
    SW = "SW"
    NW = "NW"


@dataclass(frozen=True, slots=True)
class HexIndex:
    q: int
    r: int
    origin: GeoPoint


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    lat1, lat2 = math.radians(a.latitude), math.radians(b.latitude)
    dlat = lat2 - lat1
    dlon = math.radians(b.longitude - a.longitude)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * R_EARTH_KM * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from a to b, degrees clockwise from north in [0, 360)."""
    if a == b:
        raise CoincidentPoints(f"bearing undefined for identical points {a}")
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dlam = math.radians(b.longitude - a.longitude)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    bearing = math.degrees(math.atan2(y, x)) % 360.0
    # -0.0 % 360 and tiny negatives can land on 360.0
    return 0.0 if bearing >= 360.0 else bearing


def quadrant_of(bearing: float) -> HeadingQuadrant:
    b = bearing % 360.0
    if b < 90.0:
        return HeadingQuadrant.NE
    if b < 180.0:
        return HeadingQuadrant.SE
    if b < 270.0:
        return HeadingQuadrant.SW
    return HeadingQuadrant.NW


def cyclic_encode(value: float, period: float) -> tuple[float, float]:
    if period <= 0:
        raise ValueError("period must be positive")
    angle = 2.0 * math.pi * value / period
    return math.sin(angle), math.cos(angle)


def to_local_km(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection around `origin`; returns (km east, km north)."""
    if abs(p.latitude) >= 89.0 or abs(origin.latitude) >= 89.0:
        raise PolarRegion(f"latitude too close to pole: {p.latitude}")
    dlon = _wrap_lon(p.longitude - origin.longitude)
    x = dlon * math.cos(math.radians(origin.latitude)) * KM_PER_DEG
    y = (p.latitude - origin.latitude) * KM_PER_DEG
    return x, y


def from_local_km(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    lat = origin.latitude + y / KM_PER_DEG
    lon = origin.longitude + x / (KM_PER_DEG * math.cos(math.radians(origin.latitude)))
    return GeoPoint(max(-90.0, min(90.0, lat)), _wrap_lon(lon))


def destination_point(p: GeoPoint, bearing: float, distance_km: float) -> GeoPoint:
    """Point reached travelling `distance_km` along a great circle from p."""
    delta = distance_km / R_EARTH_KM
    theta = math.radians(bearing)
    phi1, lam1 = math.radians(p.latitude), math.radians(p.longitude)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    return GeoPoint(math.degrees(phi2), _wrap_lon(math.degrees(lam2)))


def interpolate_great_circle(a: GeoPoint, b: GeoPoint, fraction: float) -> GeoPoint:
    """Spherical linear interpolation between a and b."""
    d = haversine_km(a, b) / R_EARTH_KM
    if d == 0.0:
        return a
    phi1, lam1 = math.radians(a.latitude), math.radians(a.longitude)
    phi2, lam2 = math.radians(b.latitude), math.radians(b.longitude)
    wa = math.sin((1.0 - fraction) * d) / math.sin(d)
    wb = math.sin(fraction * d) / math.sin(d)
    x = wa * math.cos(phi1) * math.cos(lam1) + wb * math.cos(phi2) * math.cos(lam2)
    y = wa * math.cos(phi1) * math.sin(lam1) + wb * math.cos(phi2) * math.sin(lam2)
    z = wa * math.sin(phi1) + wb * math.sin(phi2)
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    return GeoPoint(lat, _wrap_lon(math.degrees(math.atan2(y, x))))


def _cube_round(qf: float, rf: float) -> tuple[int, int]:
    sf = -qf - rf
    q, r, s = round(qf), round(rf), round(sf)
    dq, dr, ds = abs(q - qf), abs(r - rf), abs(s - sf)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return int(q), int(r)


def hex_index(p: GeoPoint, origin: GeoPoint, circumradius_km: float = DEFAULT_CELL_RADIUS_KM) -> HexIndex:
    """Pointy-top axial hex cell containing p, on a grid anchored at origin."""
    x, y = to_local_km(p, origin)
    qf = (_SQRT3 / 3.0 * x - y / 3.0) / circumradius_km
    rf = (2.0 / 3.0 * y) / circumradius_km
    q, r = _cube_round(qf, rf)
    return HexIndex(q, r, origin)


def hex_center_local(q: int, r: int, circumradius_km: float) -> tuple[float, float]:
    return circumradius_km * _SQRT3 * (q + r / 2.0), circumradius_km * 1.5 * r


def hex_center(h: HexIndex, circumradius_km: float = DEFAULT_CELL_RADIUS_KM) -> GeoPoint:
    x, y = hex_center_local(h.q, h.r, circumradius_km)
    return from_local_km(x, y, h.origin)
