"""Layered handover-probability regions.

Historical handover events are split by handover kind and heading quadrant.
Inside each partition DBSCAN finds dense parent clusters; each cluster is then
re-clustered with a shrinking radius to produce nested, denser child regions.
A region's probability is its share of its parent's events (the partition
total for the outermost layer).
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geodesy import (
    R_EARTH_KM,
    GeoPoint,
    HeadingQuadrant,
    from_local_km,
    to_local_km,
)

log = logging.getLogger(__name__)

NOISE = -1
_DISC_VERTICES = 24
_EDGE_TOL = 1e-9

Ring = tuple[GeoPoint, ...]


class HandoverKind(str, Enum):
    SATELLITE = "Satellite"
    MAKE_BEFORE_BREAK = "MakeBeforeBreak"
    BREAK_BEFORE_MAKE = "BreakBeforeMake"


class DegenerateCluster(ValueError):
    """Fewer than three non-collinear points; no polygon can be formed."""


class ContainmentViolation(ValueError):
    """An inner ring pokes outside the ring it is subtracted from."""


class EmptyPartition(ValueError):
    pass


class MalformedAtlasFile(ValueError):
    pass


@dataclass(frozen=True)
class HandoverEvent:
    position: GeoPoint
    quadrant: HeadingQuadrant
    kind: HandoverKind
    timestamp: float
    flight_id: str | None = None

    def to_json(self) -> dict:
        d = {
            "position": self.position.to_json(),
            "quadrant": self.quadrant.value,
            "kind": self.kind.value,
            "timestamp": self.timestamp,
        }
        if self.flight_id is not None:
            d["flight_id"] = self.flight_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "HandoverEvent":
        return cls(
            GeoPoint.from_json(d["position"]),
            HeadingQuadrant(d["quadrant"]),
            HandoverKind(d["kind"]),
            d["timestamp"],
            d.get("flight_id"),
        )


@dataclass(frozen=True)
class ContourConfig:
    num_layers: int = 4
    min_distance: float = 10.0
    max_distance: float = 50.0
    min_samples: int = 5
    eps1: float | None = None

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.min_distance <= 0 or self.max_distance < self.min_distance:
            raise ValueError("need 0 < min_distance <= max_distance")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")

    @property
    def initial_eps(self) -> float:
        return self.max_distance if self.eps1 is None else self.eps1


@dataclass
class ContourRegion:
    region_id: int
    parent_id: int | None
    layer: int
    outer_ring: Ring
    holes: list[Ring] = field(default_factory=list)
    event_count: int = 0
    probability: float = 0.0
    eps_km: float = 0.0

    def contains(self, p: GeoPoint) -> bool:
        return point_in_ring(p, self.outer_ring) and not any(point_in_ring(p, h) for h in self.holes)


@dataclass
class HandoverAtlas:
    partitions: dict[tuple[HandoverKind, HeadingQuadrant], list[ContourRegion]]
    config: ContourConfig
    source_event_count: int = 0


# ---------------------------------------------------------------- clustering

def _haversine_row(lat0: float, lon0: float, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    dlat = lat - lat0
    dlon = lon - lon0
    h = np.sin(dlat / 2.0) ** 2 + math.cos(lat0) * np.cos(lat) * np.sin(dlon / 2.0) ** 2
    return 2.0 * R_EARTH_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def dbscan(points: Sequence[GeoPoint], eps_km: float, min_samples: int) -> list[int]:
    """Label each point with a cluster id (0, 1, ...) or NOISE.

    Core points have at least `min_samples` points (themselves included)
    within `eps_km` great-circle distance. Border points go to the first
    cluster that reaches them when clusters are grown in input order.
    """
    if eps_km <= 0 or min_samples < 1:
        raise ValueError("eps_km must be > 0 and min_samples >= 1")
    n = len(points)
    if n == 0:
        return []
    lat = np.radians([p.latitude for p in points])
    lon = np.radians([p.longitude for p in points])

    cache: dict[int, np.ndarray] = {}

    def neighbors(i: int) -> np.ndarray:
        nb = cache.get(i)
        if nb is None:
            nb = np.flatnonzero(_haversine_row(lat[i], lon[i], lat, lon) <= eps_km)
            cache[i] = nb
        return nb

    unvisited = -2
    labels = [unvisited] * n
    cluster = 0
    for i in range(n):
        if labels[i] != unvisited:
            continue
        nb = neighbors(i)
        if len(nb) < min_samples:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(int(j) for j in nb)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != unvisited:
                continue
            labels[j] = cluster
            nbj = neighbors(j)
            if len(nbj) >= min_samples:
                queue.extend(int(k) for k in nbj)
        cluster += 1
    return labels


def compute_step(config: ContourConfig) -> float:
    return (config.max_distance - config.min_distance) / config.num_layers


def epsilon_schedule(config: ContourConfig) -> list[float]:
    """DBSCAN radius for the parent layer followed by each child layer."""
    eps1 = config.initial_eps
    step = compute_step(config)
    return [eps1] + [max(eps1 - step * (i + 1), config.min_distance) for i in range(config.num_layers)]


# ------------------------------------------------------------------ geometry

def _centroid(points: Sequence[GeoPoint]) -> GeoPoint:
    ref = points[0]
    dlon = [((p.longitude - ref.longitude + 180.0) % 360.0) - 180.0 for p in points]
    lat = sum(p.latitude for p in points) / len(points)
    return GeoPoint(lat, ref.longitude + sum(dlon) / len(points))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[GeoPoint]) -> Ring:
    """Counterclockwise hull vertices (no repeated closing vertex)."""
    uniq = list(dict.fromkeys(points))
    if len(uniq) < 3:
        raise DegenerateCluster(f"{len(uniq)} distinct points")
    origin = _centroid(uniq)
    xy = [(to_local_km(p, origin), p) for p in uniq]
    xy.sort(key=lambda t: (t[0][0], t[0][1]))
    span = max(max(abs(c[0][0]), abs(c[0][1])) for c in xy) or 1.0
    tol = 1e-12 * span * span

    def half(seq):
        out: list = []
        for item in seq:
            while len(out) >= 2 and _cross(out[-2][0], out[-1][0], item[0]) <= tol:
                out.pop()
            out.append(item)
        return out

    lower = half(xy)
    upper = half(reversed(xy))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateCluster("points are collinear")
    return tuple(p for _, p in hull)


def disc_ring(center: GeoPoint, radius_km: float, n: int = _DISC_VERTICES) -> Ring:
    return tuple(
        from_local_km(radius_km * math.cos(2 * math.pi * k / n), radius_km * math.sin(2 * math.pi * k / n), center)
        for k in range(n)
    )


def _ring_plane(ring: Ring, ref_lon: float) -> list[tuple[float, float]]:
    return [(((v.longitude - ref_lon + 180.0) % 360.0) - 180.0, v.latitude) for v in ring]


def point_in_ring(p: GeoPoint, ring: Ring) -> bool:
    """Even-odd ray casting in the lon/lat plane; points on an edge count as inside."""
    ref = ring[0].longitude
    x = ((p.longitude - ref + 180.0) % 360.0) - 180.0
    y = p.latitude
    pts = _ring_plane(ring, ref)
    inside = False
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # on-edge check
        cr = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        seg = math.hypot(x2 - x1, y2 - y1)
        if abs(cr) <= _EDGE_TOL * max(seg, 1e-12) and min(x1, x2) - _EDGE_TOL <= x <= max(x1, x2) + _EDGE_TOL \
                and min(y1, y2) - _EDGE_TOL <= y <= max(y1, y2) + _EDGE_TOL:
            return True
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def clip_ring(subject: Ring, clip: Ring) -> Ring:
    """Sutherland-Hodgman clip of `subject` against the convex CCW ring `clip`."""
    ref = clip[0].longitude
    cpts = _ring_plane(clip, ref)
    out = _ring_plane(subject, ref)
    n = len(cpts)
    for i in range(n):
        a, b = cpts[i], cpts[(i + 1) % n]
        inp, out = out, []
        if not inp:
            break
        prev = inp[-1]
        for cur in inp:
            cin = _cross(a, b, cur) >= 0
            pin = _cross(a, b, prev) >= 0
            if cin:
                if not pin:
                    out.append(_intersect(prev, cur, a, b))
                out.append(cur)
            elif pin:
                out.append(_intersect(prev, cur, a, b))
            prev = cur
    ring = tuple(dict.fromkeys(GeoPoint(y, ((x + ref + 180.0) % 360.0) - 180.0) for x, y in out))
    return ring


def _intersect(p1, p2, a, b):
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    ex, ey = b[0] - a[0], b[1] - a[1]
    denom = dx * ey - dy * ex
    if denom == 0:
        return p2
    t = ((a[0] - p1[0]) * ey - (a[1] - p1[1]) * ex) / denom
    return (p1[0] + t * dx, p1[1] + t * dy)


def ring_inside(inner: Ring, outer: Ring) -> bool:
    return all(point_in_ring(v, outer) for v in inner)


def subtract_inner(outer: ContourRegion, inner_rings: Iterable[Ring]) -> ContourRegion:
    """Return `outer` with each inner ring added as a hole.

    Rings that are not fully inside the outer ring are clipped to it and a
    warning is logged.
    """
    holes = list(outer.holes)
    for ring in inner_rings:
        if not ring_inside(ring, outer.outer_ring):
            log.warning("%s", ContainmentViolation(f"inner ring escapes region {outer.region_id}; clipped"))
            ring = clip_ring(ring, outer.outer_ring)
            if len(ring) < 3:
                continue
        holes.append(ring)
    return ContourRegion(
        outer.region_id, outer.parent_id, outer.layer, outer.outer_ring, holes,
        outer.event_count, outer.probability, outer.eps_km,
    )


def _polygon_for(points: Sequence[GeoPoint], config: ContourConfig) -> Ring:
    try:
        return convex_hull(points)
    except DegenerateCluster:
        return disc_ring(_centroid(points), config.min_distance)


# -------------------------------------------------------------- construction

def _build_partition(points: list[GeoPoint], config: ContourConfig, next_id: int) -> tuple[list[ContourRegion], int]:
    schedule = epsilon_schedule(config)
    total = len(points)
    regions: dict[int, ContourRegion] = {}
    order: list[int] = []

    def clusters_of(idx: list[int], eps: float) -> list[list[int]]:
        labels = dbscan([points[i] for i in idx], eps, config.min_samples)
        groups: dict[int, list[int]] = {}
        for i, lab in zip(idx, labels):
            if lab != NOISE:
                groups.setdefault(lab, []).append(i)
        return [groups[k] for k in sorted(groups)]

    current: list[tuple[int, list[int]]] = []
    for members in clusters_of(list(range(total)), schedule[0]):
        ring = _polygon_for([points[i] for i in members], config)
        reg = ContourRegion(next_id, None, 0, ring, [], len(members), len(members) / total, schedule[0])
        regions[next_id] = reg
        order.append(next_id)
        current.append((next_id, members))
        next_id += 1

    for layer in range(config.num_layers):
        eps2 = schedule[layer + 1]
        nxt: list[tuple[int, list[int]]] = []
        for parent_id, members in current:
            parent = regions[parent_id]
            child_rings = []
            for child in clusters_of(members, eps2):
                ring = _polygon_for([points[i] for i in child], config)
                if not ring_inside(ring, parent.outer_ring):
                    ring = clip_ring(ring, parent.outer_ring)
                    if len(ring) < 3:
                        continue
                reg = ContourRegion(next_id, parent_id, layer + 1, ring, [], len(child),
                                    len(child) / len(members), eps2)
                regions[next_id] = reg
                order.append(next_id)
                child_rings.append(ring)
                nxt.append((next_id, child))
                next_id += 1
            regions[parent_id] = subtract_inner(parent, child_rings)
        current = nxt
    return [regions[i] for i in order], next_id


def build_contoured_regions(events: Sequence[HandoverEvent], config: ContourConfig) -> HandoverAtlas:
    """Cluster events per (kind, quadrant) into nested probability regions."""
    buckets: dict[tuple[HandoverKind, HeadingQuadrant], list[GeoPoint]] = {}
    for ev in events:
        buckets.setdefault((ev.kind, ev.quadrant), []).append(ev.position)
    if not buckets:
        raise EmptyPartition("no handover events")
    partitions = {}
    next_id = 0
    for kind in HandoverKind:
        for quad in HeadingQuadrant:
            pts = buckets.get((kind, quad))
            if not pts:
                log.info("skipping empty partition %s/%s", kind.value, quad.value)
                continue
            regs, next_id = _build_partition(pts, config, next_id)
            partitions[(kind, quad)] = regs
    return HandoverAtlas(partitions, config, len(events))


# -------------------------------------------------------------------- query

def _deepest_chain(p: GeoPoint, candidates: list[ContourRegion],
                   children: dict[int | None, list[ContourRegion]]) -> list[ContourRegion]:
    best: list[ContourRegion] = []
    for reg in candidates:
        if point_in_ring(p, reg.outer_ring):
            chain = [reg] + _deepest_chain(p, children.get(reg.region_id, []), children)
            if len(chain) > len(best):
                best = chain
    return best


def _children_map(regions: list[ContourRegion]) -> dict[int | None, list[ContourRegion]]:
    children: dict[int | None, list[ContourRegion]] = {}
    for reg in regions:
        children.setdefault(reg.parent_id, []).append(reg)
    return children


def _probability(p: GeoPoint, roots: list[ContourRegion],
                 children: dict[int | None, list[ContourRegion]]) -> float:
    chain = _deepest_chain(p, roots, children)
    # walk up from the deepest region; a hole that is the next region's ring
    # on the chain is already accounted for by that deeper region
    for depth in range(len(chain) - 1, -1, -1):
        reg = chain[depth]
        below = chain[depth + 1].outer_ring if depth + 1 < len(chain) else None
        if not any(h != below and point_in_ring(p, h) for h in reg.holes):
            return reg.probability
    return 0.0


def query_probability(atlas: HandoverAtlas, p: GeoPoint, quadrant: HeadingQuadrant,
                      kind: HandoverKind) -> float:
    """Probability of the deepest region containing p; 0.0 outside every region."""
    regions = atlas.partitions.get((kind, quadrant))
    if not regions:
        return 0.0
    children = _children_map(regions)
    return _probability(p, children.get(None, []), children)


class AtlasQuery:
    """Pre-indexed view of an atlas for repeated lookups."""

    def __init__(self, atlas: HandoverAtlas):
        self.atlas = atlas
        self._children = {key: _children_map(regs) for key, regs in atlas.partitions.items()}
        self._bbox = {}
        for regions in atlas.partitions.values():
            for reg in regions:
                lats = [v.latitude for v in reg.outer_ring]
                lons = [v.longitude for v in reg.outer_ring]
                self._bbox[reg.region_id] = (min(lats), max(lats), min(lons), max(lons))

    def probability(self, p: GeoPoint, quadrant: HeadingQuadrant, kind: HandoverKind) -> float:
        ch = self._children.get((kind, quadrant))
        if not ch:
            return 0.0
        roots = [r for r in ch.get(None, []) if self._maybe(r, p)]
        if not roots:
            return 0.0
        return _probability(p, roots, ch)

    def _maybe(self, reg: ContourRegion, p: GeoPoint) -> bool:
        la0, la1, lo0, lo1 = self._bbox[reg.region_id]
        pad = 1e-6
        if not la0 - pad <= p.latitude <= la1 + pad:
            return False
        if lo1 - lo0 > 180.0:  # ring straddles the antimeridian
            return True
        return lo0 - pad <= p.longitude <= lo1 + pad


# ---------------------------------------------------------------------- I/O

def _ring_json(ring: Ring) -> list[list[float]]:
    return [[v.longitude, v.latitude] for v in ring]


def atlas_to_json(atlas: HandoverAtlas) -> dict:
    cfg = atlas.config
    return {
        "config": {
            "num_layers": cfg.num_layers,
            "min_distance": cfg.min_distance,
            "max_distance": cfg.max_distance,
            "min_samples": cfg.min_samples,
            "eps1": cfg.initial_eps,
        },
        "source_event_count": atlas.source_event_count,
        "partitions": {
            f"{kind.value}/{quad.value}": [
                {
                    "region_id": r.region_id,
                    "parent_id": r.parent_id,
                    "layer": r.layer,
                    "outer_ring": _ring_json(r.outer_ring),
                    "holes": [_ring_json(h) for h in r.holes],
                    "event_count": r.event_count,
                    "probability": r.probability,
                    "eps_km": r.eps_km,
                }
                for r in regions
            ]
            for (kind, quad), regions in atlas.partitions.items()
        },
    }


def save_atlas(atlas: HandoverAtlas, path: str | Path) -> None:
    Path(path).write_text(json.dumps(atlas_to_json(atlas), indent=1, sort_keys=True) + "\n")


def _parse_ring(raw, where: str) -> Ring:
    try:
        ring = tuple(GeoPoint(float(lat), float(lon)) for lon, lat in raw)
    except (TypeError, ValueError) as exc:
        raise MalformedAtlasFile(f"{where}: bad vertex list ({exc})") from None
    if len(ring) < 3:
        raise MalformedAtlasFile(f"{where}: ring needs >= 3 vertices")
    return ring


def atlas_from_json(doc: dict) -> HandoverAtlas:
    try:
        c = doc["config"]
        config = ContourConfig(int(c["num_layers"]), float(c["min_distance"]), float(c["max_distance"]),
                               int(c["min_samples"]), float(c["eps1"]))
        raw_parts = doc["partitions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedAtlasFile(f"config/partitions: {exc!r}") from None
    partitions = {}
    for key, raw_regions in raw_parts.items():
        try:
            kind_s, quad_s = key.split("/")
            pkey = (HandoverKind(kind_s), HeadingQuadrant(quad_s))
        except ValueError:
            raise MalformedAtlasFile(f"partitions: bad key {key!r}") from None
        regs = []
        for i, r in enumerate(raw_regions):
            where = f"partitions[{key}][{i}]"
            try:
                regs.append(ContourRegion(
                    int(r["region_id"]),
                    None if r["parent_id"] is None else int(r["parent_id"]),
                    int(r["layer"]),
                    _parse_ring(r["outer_ring"], where + ".outer_ring"),
                    [_parse_ring(h, f"{where}.holes[{j}]") for j, h in enumerate(r["holes"])],
                    int(r["event_count"]),
                    float(r["probability"]),
                    float(r.get("eps_km", 0.0)),
                ))
            except KeyError as exc:
                raise MalformedAtlasFile(f"{where}: missing field {exc}") from None
            except (TypeError, ValueError) as exc:
                if isinstance(exc, MalformedAtlasFile):
                    raise
                raise MalformedAtlasFile(f"{where}: {exc}") from None
        partitions[pkey] = regs
    return HandoverAtlas(partitions, config, int(doc.get("source_event_count", 0)))


def load_atlas(path: str | Path) -> HandoverAtlas:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedAtlasFile(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise MalformedAtlasFile("top level must be an object")
    return atlas_from_json(doc)
