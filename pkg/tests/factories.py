"""Small builders for hand-made telemetry."""
import numpy as np

from flightperf.geodesy import GeoPoint, destination_point
from flightperf.records import TelemetryRecord


def rec(lat=38.0, lon=-97.0, *, t=0, fid="F1", tail="N1", beam="S0-B0", sat="S0", snr=10.0, mir=20.0,
        score=8, devices=5, origin="AAA", dest="BBB", alt=41000.0):
    return TelemetryRecord(fid, int(t), tail, origin, dest, GeoPoint(lat, lon), alt, sat, beam,
                           float(snr), float(mir), devices, score)


def random_records(rng: np.random.Generator, n: int, beams=("S0-B0", "S0-B1", "S1-B0"),
                   center=GeoPoint(38.0, -97.0), spread_km=600.0):
    out = []
    for i in range(n):
        p = destination_point(center, rng.uniform(0, 360), spread_km * np.sqrt(rng.uniform()))
        beam = beams[int(rng.integers(len(beams)))]
        out.append(TelemetryRecord(f"F{i // 50}", i * 30, f"N{i % 7}", "AAA", "BBB", p, 41000.0,
                                   beam.split("-")[0], beam, float(rng.normal(8, 3)),
                                   float(rng.uniform(5, 60)), int(rng.integers(0, 40)),
                                   int(rng.integers(1, 11))))
    return out


def straight_flight(origin: GeoPoint, bearing: float, n: int, step_s=30, speed_kmh=900.0, **kw):
    step_km = speed_kmh * step_s / 3600.0
    return [rec(*_ll(destination_point(origin, bearing, i * step_km)), t=i * step_s, **kw) for i in range(n)]


def _ll(p: GeoPoint):
    return p.latitude, p.longitude
