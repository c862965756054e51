"""Directions and positions.

Convention used everywhere: azimuth in degrees counter-clockwise from straight
ahead (+90 is to the left), elevation in degrees up from the horizontal plane,
optional distance in metres. Cartesian frame: x ahead, y left, z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def wrap_azimuth(az_deg: float) -> float:
    """Wrap an azimuth into (-180, 180]."""
    az = math.fmod(az_deg, 360.0)
    if az <= -180.0:
        az += 360.0
    elif az > 180.0:
        az -= 360.0
    return az


@dataclass(frozen=True)
class Direction3:
    """Direction with optional range; distance None means direction-only."""

    az_deg: float
    el_deg: float = 0.0
    distance_m: float | None = None

    def unit_vector(self) -> tuple[float, float, float]:
        az = math.radians(self.az_deg)
        el = math.radians(self.el_deg)
        return (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))

    def cartesian(self) -> tuple[float, float, float]:
        if self.distance_m is None:
            raise ValueError("direction has no distance")
        x, y, z = self.unit_vector()
        r = self.distance_m
        return (x * r, y * r, z * r)


def from_cartesian(x: float, y: float, z: float) -> Direction3:
    r = math.sqrt(x * x + y * y + z * z)
    if r < 1e-12:
        # degenerate point at the origin: direction is arbitrary, keep front
        return Direction3(0.0, 0.0, 0.0)
    el = math.degrees(math.asin(max(-1.0, min(1.0, z / r))))
    az = math.degrees(math.atan2(y, x))
    return Direction3(wrap_azimuth(az), el, r)


def angle_between_deg(a: Direction3, b: Direction3) -> float:
    """Great-circle angle between two directions, in degrees."""
    ax, ay, az = a.unit_vector()
    bx, by, bz = b.unit_vector()
    dot = max(-1.0, min(1.0, ax * bx + ay * by + az * bz))
    return math.degrees(math.acos(dot))


def ccw_arc_deg(az_from: float, az_to: float) -> float:
    """Counter-clockwise arc from one azimuth to another, in [0, 360)."""
    return (az_to - az_from) % 360.0
