"""Great-circle distance and idealized fiber propagation delay.

Distances use the haversine formula on a sphere with the IUGG mean Earth
radius. Delays assume signals travel at 2/3 of the vacuum speed of light,
the usual figure for optical fiber, and are therefore lower bounds on what
any terrestrial path can achieve. All functions are pure and safe to call
from concurrent workers.
"""

import math
from dataclasses import dataclass

from .errors import InputError

EARTH_RADIUS_KM = 6371.0088
LIGHT_SPEED_KM_S = 299792.458
FIBER_FACTOR = 2.0 / 3.0


@dataclass(frozen=True)
class GeoCoord:
    """A latitude/longitude position in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InputError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InputError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class PropagationConstants:
    """Physical constants for the delay model.

    The fiber factor is pinned to exactly 2/3; a different refraction model
    would silently change every feasibility decision downstream.
    """

    light_speed_km_s: float = LIGHT_SPEED_KM_S
    fiber_factor: float = FIBER_FACTOR
    earth_radius_km: float = EARTH_RADIUS_KM

    def __post_init__(self):
        if self.fiber_factor != 2.0 / 3.0:
            raise InputError(f"fiber_factor must be exactly 2/3, got {self.fiber_factor}")
        if not self.light_speed_km_s > 0:
            raise InputError("light_speed_km_s must be positive")
        if not self.earth_radius_km > 0:
            raise InputError("earth_radius_km must be positive")


DEFAULT_CONSTANTS = PropagationConstants()


def geo_distance(a: GeoCoord, b: GeoCoord, constants: PropagationConstants = DEFAULT_CONSTANTS) -> float:
    """Great-circle distance between two coordinates, in kilometers.

    Symmetric, non-negative, and bounded by pi times the Earth radius.
    """
    lat1, lon1 = math.radians(a.lat), math.radians(a.lon)
    lat2, lon2 = math.radians(b.lat), math.radians(b.lon)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    # rounding can push h a hair above 1 for antipodal points
    h = min(1.0, h)
    return 2.0 * constants.earth_radius_km * math.asin(math.sqrt(h))


def delay_from_distance(distance_km: float, constants: PropagationConstants = DEFAULT_CONSTANTS) -> float:
    """One-way propagation delay in milliseconds for a fiber path of the given length."""
    if not (math.isfinite(distance_km) and distance_km >= 0):
        raise InputError(f"invalid distance {distance_km}")
    return distance_km / (constants.light_speed_km_s * constants.fiber_factor) * 1000.0


def propagation_delay(a: GeoCoord, b: GeoCoord, constants: PropagationConstants = DEFAULT_CONSTANTS) -> float:
    """One-way idealized fiber delay between two coordinates, in milliseconds."""
    return delay_from_distance(geo_distance(a, b, constants), constants)
