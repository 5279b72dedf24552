"""Local ENU frame <-> WGS84 conversion around a scenario anchor.

Equirectangular approximation; adequate for scene extents up to ~1 km.
Wire units are 0.1 microdegrees (1e-7 deg), matching the message codec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

EARTH_RADIUS_M = 6_378_137.0


def to_units(value: float, units_per_unit: int) -> int:
    """Scale and round half away from zero, on the exact binary value.

    Scaling happens in exact rational arithmetic: -2.005 m is really
    -2.00499999999999989... as a double, so its value in 0.01 m units is
    just under 200.5 in magnitude and must round to -200. A float multiply
    would land on -200.5 exactly and flip the tie.
    """
    f = Fraction(value) * units_per_unit
    if f < 0:
        return -math.floor(-f + Fraction(1, 2))
    return math.floor(f + Fraction(1, 2))


def quantize(value: float) -> int:
    """Round half away from zero to the nearest integer unit."""
    return to_units(value, 1)


@dataclass(frozen=True)
class GeoAnchor:
    lat_deg: float
    lon_deg: float

    def enu_to_wgs84(self, x: float, y: float) -> tuple[float, float]:
        lat = self.lat_deg + math.degrees(y / EARTH_RADIUS_M)
        lon = self.lon_deg + math.degrees(
            x / (EARTH_RADIUS_M * math.cos(math.radians(self.lat_deg))))
        return lat, lon

    def wgs84_to_enu(self, lat_deg: float, lon_deg: float) -> tuple[float, float]:
        y = math.radians(lat_deg - self.lat_deg) * EARTH_RADIUS_M
        x = math.radians(lon_deg - self.lon_deg) * (
            EARTH_RADIUS_M * math.cos(math.radians(self.lat_deg)))
        return x, y

    def enu_to_units(self, x: float, y: float) -> tuple[int, int]:
        """ENU meters to signed 0.1 microdegree wire units."""
        lat, lon = self.enu_to_wgs84(x, y)
        return to_units(lat, 10**7), to_units(lon, 10**7)

    def units_to_enu(self, lat_units: int, lon_units: int) -> tuple[float, float]:
        return self.wgs84_to_enu(lat_units * 1e-7, lon_units * 1e-7)


def heading_to_compass_units(heading_rad: float) -> int:
    """ENU heading (CCW from east) to 0.1 deg compass units (CW from north)."""
    deg = (90.0 - math.degrees(heading_rad)) % 360.0
    return to_units(deg, 10) % 3600


def compass_units_to_heading(units: int) -> float:
    return math.radians(90.0 - units / 10.0)
