"""Mixed dissimilarity: squared Euclidean + simple matching + great-circle distance."""

import math
from collections.abc import Sequence
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from geoproto.exceptions import InvalidCoordinateError, SchemaMismatchError
from geoproto.models import GeoPoint, MixedPoint, Weights

if TYPE_CHECKING:
    from geoproto.data.dataset import Dataset


class EarthModel(BaseModel):
    """Sphere of radius a(1 - f) built from WGS84 constants."""

    model_config = ConfigDict(frozen=True)

    equatorial_radius_m: float = 6378137.0
    flattening: float = 1 / 298.257223563

    @property
    def effective_radius_m(self) -> float:
        return self.equatorial_radius_m * (1 - self.flattening)


WGS84 = EarthModel()


def central_angle(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle central angle (radians) between broadcastable coordinate arrays.

    Uses the atan2 form of the spherical Vincenty formula, which stays accurate
    for coincident, nearby and antipodal points.
    """
    # Canonical argument order makes the result exactly symmetric
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2)))
    swap = (lat1 > lat2) | ((lat1 == lat2) & (lon1 > lon2))
    lat1, lat2 = np.where(swap, lat2, lat1), np.where(swap, lat1, lat2)
    lon1, lon2 = np.where(swap, lon2, lon1), np.where(swap, lon1, lon2)

    dlon = lon2 - lon1
    sin_lat1, cos_lat1 = np.sin(lat1), np.cos(lat1)
    sin_lat2, cos_lat2 = np.sin(lat2), np.cos(lat2)
    cos_dlon = np.cos(dlon)
    y = np.hypot(cos_lat2 * np.sin(dlon), cos_lat1 * sin_lat2 - sin_lat1 * cos_lat2 * cos_dlon)
    x = sin_lat1 * sin_lat2 + cos_lat1 * cos_lat2 * cos_dlon
    return np.arctan2(y, x)


def geodetic_distance_m(p: GeoPoint, q: GeoPoint, earth: EarthModel = WGS84) -> float:
    """Great-circle distance in meters on the effective-radius sphere."""
    for point in (p, q):
        if math.isnan(point.lat) or math.isnan(point.lon):
            raise InvalidCoordinateError("Coordinates must not be NaN")
    return float(earth.effective_radius_m * central_angle(p.lat, p.lon, q.lat, q.lon))


def distances_to_point(spatial: np.ndarray, point: GeoPoint, earth: EarthModel = WGS84) -> np.ndarray:
    """Meters from every (lat, lon) row of ``spatial`` to ``point``."""
    return earth.effective_radius_m * central_angle(spatial[:, 0], spatial[:, 1], point.lat, point.lon)


def simple_matching(a: Sequence[int], b: Sequence[int]) -> int:
    """Number of positions where two categorical vectors differ."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise SchemaMismatchError(f"Categorical vectors differ in length: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


class DistanceComponents(NamedTuple):
    """Weighted numerical, categorical and spatial parts of the dissimilarity."""

    numerical: float | np.ndarray
    categorical: float | np.ndarray
    spatial: float | np.ndarray

    @property
    def total(self) -> float | np.ndarray:
        return self.numerical + self.categorical + self.spatial


def _check_compatible(x: MixedPoint, z: MixedPoint) -> None:
    if len(x.numerical) != len(z.numerical):
        raise SchemaMismatchError("Numerical parts differ in length")
    if len(x.categorical) != len(z.categorical):
        raise SchemaMismatchError("Categorical parts differ in length")
    if (x.location is None) != (z.location is None):
        raise SchemaMismatchError("Only one of the points has a location")


def mixed_distance_components(
    x: MixedPoint, z: MixedPoint, w: Weights, earth: EarthModel = WGS84
) -> DistanceComponents:
    _check_compatible(x, z)
    diff = np.subtract(x.numerical, z.numerical)
    numerical = float(np.dot(diff, diff))
    categorical = w.lambda1 * simple_matching(x.categorical, z.categorical) if x.categorical else 0.0
    spatial = 0.0
    if x.location is not None and z.location is not None:
        spatial = w.lambda2 * geodetic_distance_m(x.location, z.location, earth)
    return DistanceComponents(numerical, categorical, spatial)


def mixed_distance(x: MixedPoint, z: MixedPoint, w: Weights, earth: EarthModel = WGS84) -> float:
    """Dissimilarity between a record and a record or prototype."""
    return float(mixed_distance_components(x, z, w, earth).total)


def component_distances(
    data: "Dataset", z: MixedPoint, w: Weights, earth: EarthModel = WGS84
) -> DistanceComponents:
    """Weighted component distances from every record of ``data`` to ``z`` (arrays of length n)."""
    if len(z.numerical) != data.numerical.shape[1] or len(z.categorical) != data.categorical.shape[1]:
        raise SchemaMismatchError("Point does not match the dataset schema")
    if (z.location is None) != (data.spatial is None):
        raise SchemaMismatchError("Point and dataset disagree on the spatial pair")

    diff = data.numerical - np.asarray(z.numerical, dtype=np.float64)
    numerical = np.einsum("ij,ij->i", diff, diff)
    if data.categorical.shape[1]:
        mismatches = np.count_nonzero(data.categorical != np.asarray(z.categorical), axis=1)
        categorical = w.lambda1 * mismatches.astype(np.float64)
    else:
        categorical = np.zeros(data.n)
    if data.spatial is not None and z.location is not None:
        spatial = w.lambda2 * distances_to_point(data.spatial, z.location, earth)
    else:
        spatial = np.zeros(data.n)
    return DistanceComponents(numerical, categorical, spatial)


# Upper bound on matrix entries evaluated at once by angle_sums
_ANGLE_BLOCK = 1 << 20


def angle_sums(origins: np.ndarray, points: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """For each origin (lat, lon row), the count-weighted sum of central angles to ``points``.

    Works in row blocks so memory stays bounded for large point sets.
    """
    sums = np.empty(len(origins))
    block = max(1, _ANGLE_BLOCK // max(len(points), 1))
    for start in range(0, len(origins), block):
        chunk = origins[start : start + block]
        angles = central_angle(
            chunk[:, 0, None], chunk[:, 1, None], points[None, :, 0], points[None, :, 1]
        )
        sums[start : start + block] = angles @ counts
    return sums
