"""Planar geometry helpers: polygons, segments, and arc-length polylines.

All coordinates are meters in a local east-north (ENU) frame, x east, y north.
Headings are radians, measured counter-clockwise from east.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

Point = tuple[float, float]


class DegeneratePolygon(ValueError):
    """Polygon has fewer than 3 vertices."""


def _orient(a: Point, b: Point, c: Point) -> float:
    """Signed twice-area of triangle abc (>0 counter-clockwise)."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: Point, b: Point, p: Point) -> bool:
    """p collinear with ab assumed; is p within the ab bounding box."""
    return (
        min(a[0], b[0]) - 1e-12 <= p[0] <= max(a[0], b[0]) + 1e-12
        and min(a[1], b[1]) - 1e-12 <= p[1] <= max(a[1], b[1]) + 1e-12
    )


def segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    """True if closed segments ab and cd share at least one point."""
    d1 = _orient(c, d, a)
    d2 = _orient(c, d, b)
    d3 = _orient(a, b, c)
    d4 = _orient(a, b, d)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(c, d, a):
        return True
    if d2 == 0 and _on_segment(c, d, b):
        return True
    if d3 == 0 and _on_segment(a, b, c):
        return True
    if d4 == 0 and _on_segment(a, b, d):
        return True
    return False


def point_in_polygon(p: Point, polygon: list[Point]) -> bool:
    """Even-odd ray casting; boundary points count as inside."""
    if len(polygon) < 3:
        raise DegeneratePolygon(f"polygon needs >= 3 vertices, got {len(polygon)}")
    x, y = p
    inside = False
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        # boundary check first so edge-sitting points are stable
        if _orient((ax, ay), (bx, by), p) == 0 and _on_segment((ax, ay), (bx, by), p):
            return True
        if (ay > y) != (by > y):
            x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < x_cross:
                inside = not inside
    return inside


def segment_crosses_polygon(a: Point, b: Point, polygon: list[Point]) -> bool:
    """True iff segment ab touches the polygon boundary or an endpoint is inside."""
    if len(polygon) < 3:
        raise DegeneratePolygon(f"polygon needs >= 3 vertices, got {len(polygon)}")
    n = len(polygon)
    for i in range(n):
        if segments_intersect(a, b, polygon[i], polygon[(i + 1) % n]):
            return True
    return point_in_polygon(a, polygon) or point_in_polygon(b, polygon)


def dist(a: Point, b: Point) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # rad, CCW from east

    @property
    def xy(self) -> Point:
        return (self.x, self.y)


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a-b wrapped to (-pi, pi]."""
    d = (a - b) % (2.0 * math.pi)
    if d > math.pi:
        d -= 2.0 * math.pi
    return d


class Polyline:
    """Piecewise-linear path with arc-length parametrisation."""

    def __init__(self, points: list[Point]):
        if len(points) < 2:
            raise ValueError("polyline needs >= 2 points")
        self.points = [(float(x), float(y)) for x, y in points]
        self._cum = [0.0]
        for i in range(1, len(self.points)):
            self._cum.append(self._cum[-1] + dist(self.points[i - 1], self.points[i]))
        if self._cum[-1] <= 0.0:
            raise ValueError("polyline has zero length")

    @property
    def length(self) -> float:
        return self._cum[-1]

    def point_at(self, s: float) -> Point:
        s = min(max(s, 0.0), self.length)
        i = min(bisect_right(self._cum, s), len(self._cum) - 1)
        if i == 0:
            i = 1
        a, b = self.points[i - 1], self.points[i]
        seg = self._cum[i] - self._cum[i - 1]
        t = (s - self._cum[i - 1]) / seg if seg > 0 else 0.0
        return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = min(bisect_right(self._cum, s), len(self._cum) - 1)
        if i == 0:
            i = 1
        # skip zero-length segments so the tangent is defined
        while i < len(self.points) - 1 and self._cum[i] - self._cum[i - 1] <= 0:
            i += 1
        a, b = self.points[i - 1], self.points[i]
        return math.atan2(b[1] - a[1], b[0] - a[0])

    def pose_at(self, s: float) -> Pose:
        x, y = self.point_at(s)
        return Pose(x, y, self.heading_at(s))

    def project(self, p: Point, s_near: float | None = None, window: float = 25.0) -> tuple[float, float]:
        """Arc position and unsigned lateral distance of the closest path point.

        With s_near, only segments within +-window meters of it are considered,
        which keeps projection unambiguous on self-overlapping routes.
        """
        best_s = 0.0
        best_d = float("inf")
        for i in range(1, len(self.points)):
            if s_near is not None:
                if self._cum[i] < s_near - window or self._cum[i - 1] > s_near + window:
                    continue
            a, b = self.points[i - 1], self.points[i]
            ax, ay = a
            bx, by = b
            dx, dy = bx - ax, by - ay
            seg2 = dx * dx + dy * dy
            if seg2 <= 0:
                t = 0.0
            else:
                t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / seg2
                t = min(max(t, 0.0), 1.0)
            qx, qy = ax + t * dx, ay + t * dy
            d = math.hypot(p[0] - qx, p[1] - qy)
            cand = self._cum[i - 1] + t * math.sqrt(seg2)
            better = d < best_d - 1e-9
            if not better and s_near is not None and abs(d - best_d) <= 1e-9:
                # lateral tie on an overlapping route: stay near the hint
                better = abs(cand - s_near) < abs(best_s - s_near)
            if better:
                best_d = d
                best_s = cand
        return best_s, best_d

    def arc_interval_in_polygon(self, polygon: list[Point], step: float = 0.25) -> tuple[float, float] | None:
        """First contiguous [s_enter, s_exit] interval where the path is inside polygon."""
        s = 0.0
        s_enter = None
        s_exit = None
        while s <= self.length + 1e-9:
            inside = point_in_polygon(self.point_at(min(s, self.length)), polygon)
            if inside and s_enter is None:
                s_enter = s
            if not inside and s_enter is not None:
                s_exit = s - step
                break
            s += step
        if s_enter is None:
            return None
        if s_exit is None:
            s_exit = self.length
        return (s_enter, s_exit)
