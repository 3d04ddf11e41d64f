"""Geographic primitives shared by the broker and the transit services."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate pair. Latitude/longitude in decimal degrees."""

    latitude: float
    longitude: float

    def is_valid(self) -> bool:
        return -90.0 <= self.latitude <= 90.0 and -180.0 <= self.longitude <= 180.0

    def to_json(self) -> dict:
        return {"latitude": self.latitude, "longitude": self.longitude}

    @classmethod
    def from_json(cls, obj: dict) -> "GeoPoint":
        return cls(latitude=float(obj["latitude"]), longitude=float(obj["longitude"]))


def looks_like_geo_point(value: object) -> bool:
    """True for the JSON shape that deserializes to a GeoPoint."""
    return (
        isinstance(value, dict)
        and set(value.keys()) == {"latitude", "longitude"}
        and all(isinstance(value[k], (int, float)) for k in ("latitude", "longitude"))
    )


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters, spherical Earth of radius 6371 km."""
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dphi = math.radians(b.latitude - a.latitude)
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))
