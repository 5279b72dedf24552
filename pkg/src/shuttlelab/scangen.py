"""Synthetic scan generation for bus-stop sensors.

Static furniture repeats identically in every scan (sensor noise is out of
scope); dynamic objects are sampled as labeled point templates around their
current ground-truth position. Labels ride along for oracle tests only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Point
from .perception import Label, Scan, ScanPoint

PED_RING_HEIGHTS = (0.3, 0.85, 1.4)  # m, span 1.1 clears the 0.8 threshold
PED_RING_ANGLES = 4                  # points per ring -> 12 per pedestrian


def pedestrian_points(center: Point, radius: float = 0.25,
                      phase: float = 0.0) -> list[ScanPoint]:
    """Cylinder template, 12 points; centroid lands exactly on center."""
    pts = []
    for z in PED_RING_HEIGHTS:
        for k in range(PED_RING_ANGLES):
            a = phase + 2.0 * math.pi * k / PED_RING_ANGLES
            pts.append(ScanPoint(center[0] + radius * math.cos(a),
                                 center[1] + radius * math.sin(a),
                                 z, Label.PEDESTRIAN))
    return pts


def wall_points(a: Point, b: Point, spacing: float = 0.15,
                heights: tuple[float, ...] = (0.5, 1.5, 2.5)) -> list[ScanPoint]:
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(2, int(length / spacing) + 1)
    pts = []
    for i in range(n):
        t = i / (n - 1)
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        for z in heights:
            pts.append(ScanPoint(x, y, z, Label.BACKGROUND))
    return pts


def disc_points(center: Point, radius: float, n: int = 16,
                z: float = 0.05, label: Label = Label.OTHER) -> list[ScanPoint]:
    """Flat blob (parcel, bench slab): large footprint, tiny height span."""
    pts = [ScanPoint(center[0], center[1], z, label)]
    for k in range(n - 1):
        a = 2.0 * math.pi * k / (n - 1)
        r = radius * (0.4 + 0.6 * ((k % 3) + 1) / 3.0)
        pts.append(ScanPoint(center[0] + r * math.cos(a),
                             center[1] + r * math.sin(a), z, label))
    return pts


@dataclass
class Scene:
    """Static template plus movable pedestrians, all in the sensor frame."""

    static: list[ScanPoint] = field(default_factory=list)
    max_range: float = 50.0

    def add_wall(self, a: Point, b: Point) -> None:
        self.static.extend(wall_points(a, b))

    def scan(self, sensor_id: int, sim_time_ns: int,
             pedestrians: list[Point] = (),
             extras: list[ScanPoint] = ()) -> Scan:
        pts = list(self.static)
        for center in pedestrians:
            pts.extend(pedestrian_points(center))
        pts.extend(extras)
        pts = [p for p in pts if math.hypot(p.x, p.y) <= self.max_range]
        return Scan(sensor_id, sim_time_ns, tuple(pts))

    def learning_scans(self, sensor_id: int, n: int,
                       t0_ns: int = 0, period_ns: int = 100_000_000) -> list[Scan]:
        return [self.scan(sensor_id, t0_ns + i * period_ns) for i in range(n)]
