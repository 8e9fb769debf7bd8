"""Data-driven balance weights between numerical, categorical and spatial parts.

lambda1 = average numerical variance / average categorical Gini impurity.
lambda2 = average numerical variance / variance of the great-circle distances
          from every location to the mean coordinate.

All sums are compensated (``math.fsum``) so results do not depend on record order.
"""

import logging
import math

import numpy as np

from geoproto.cluster.distance import WGS84, EarthModel, distances_to_point
from geoproto.data.dataset import Dataset
from geoproto.exceptions import DegenerateWeightError
from geoproto.models import GeoPoint, LambdaEstimate, Weights

logger = logging.getLogger(__name__)

# Distances to the center spreading less than this (meters) count as one location
MIN_DISTANCE_SD_M = 1e-6


def sample_variance(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    mean = math.fsum(values) / n
    return math.fsum((values - mean) ** 2) / (n - 1)


def average_variance(numerical: np.ndarray) -> float:
    """Mean over columns of the sample variance (n - 1 denominator)."""
    return math.fsum(sample_variance(numerical[:, j]) for j in range(numerical.shape[1])) / numerical.shape[1]


def gini_impurity(counts: np.ndarray) -> float:
    """1 - sum of squared level frequencies."""
    counts = np.asarray(counts, dtype=np.float64)
    q = counts / math.fsum(counts)
    return 1.0 - math.fsum(q * q)


def average_gini(categorical: np.ndarray, level_counts: tuple[int, ...]) -> float:
    """Gini impurity averaged over the categorical attributes."""
    ginis = [
        gini_impurity(np.bincount(categorical[:, j], minlength=level_counts[j]))
        for j in range(categorical.shape[1])
    ]
    return math.fsum(ginis) / len(ginis)


def spatial_center(spatial: np.ndarray) -> GeoPoint:
    """Arithmetic mean of latitudes and longitudes (radians)."""
    n = spatial.shape[0]
    return GeoPoint(lat=math.fsum(spatial[:, 0]) / n, lon=math.fsum(spatial[:, 1]) / n)


def distance_variance(spatial: np.ndarray, center: GeoPoint, earth: EarthModel = WGS84) -> float:
    return sample_variance(distances_to_point(spatial, center, earth))


def _require_records(data: Dataset, weight: str) -> None:
    if data.n < 2:
        raise DegenerateWeightError(weight, "at least two records are needed")
    if data.numerical.shape[1] == 0:
        raise DegenerateWeightError(weight, "no numerical attributes")


def estimate_lambda1(data: Dataset) -> float:
    """Categorical weight relative to the numerical part."""
    _require_records(data, "lambda1")
    if data.categorical.shape[1] == 0:
        raise DegenerateWeightError("lambda1", "no categorical attributes")
    gini = average_gini(data.categorical, data.schema.level_counts())
    if gini <= 0:
        raise DegenerateWeightError("lambda1", "every categorical attribute is constant")
    return average_variance(data.numerical) / gini


def estimate_lambda2(data: Dataset, earth: EarthModel = WGS84) -> float:
    """Spatial weight (per meter) relative to the numerical part."""
    _require_records(data, "lambda2")
    if data.spatial is None:
        raise DegenerateWeightError("lambda2", "no spatial attribute")
    variance = distance_variance(data.spatial, spatial_center(data.spatial), earth)
    if math.sqrt(variance) < MIN_DISTANCE_SD_M:
        raise DegenerateWeightError(
            "lambda2", "all locations coincide or are equidistant from the center"
        )
    return average_variance(data.numerical) / variance


def estimate_lambdas(data: Dataset, earth: EarthModel = WGS84) -> LambdaEstimate:
    """Both weights with their ingredients; absent attribute kinds get weight 0."""
    _require_records(data, "lambda1")
    numer = average_variance(data.numerical)

    gini = 0.0
    lambda1 = 0.0
    if data.categorical.shape[1]:
        gini = average_gini(data.categorical, data.schema.level_counts())
        lambda1 = estimate_lambda1(data)

    center = None
    spread = 0.0
    lambda2 = 0.0
    if data.spatial is not None:
        center = spatial_center(data.spatial)
        spread = distance_variance(data.spatial, center, earth)
        lambda2 = estimate_lambda2(data, earth)

    estimate = LambdaEstimate(
        lambda1=lambda1,
        lambda2=lambda2,
        numer_avg_variance=numer,
        categorical_avg_gini=gini,
        spatial_distance_variance=spread,
        center=center,
    )
    logger.info(f"Estimated lambda1={lambda1:.6g} lambda2={lambda2:.6g} (numerical variance {numer:.6g})")
    return estimate


def resolve_weights(
    data: Dataset,
    lambda1: float | None = None,
    lambda2: float | None = None,
    earth: EarthModel = WGS84,
) -> Weights:
    """Weights to cluster with: overrides where given, estimates otherwise.

    Estimates are attempted and logged even when overridden.
    """
    resolved = {}
    for name, override, estimator in (
        ("lambda1", lambda1, lambda: estimate_lambda1(data)),
        ("lambda2", lambda2, lambda: estimate_lambda2(data, earth)),
    ):
        absent = (name == "lambda1" and data.categorical.shape[1] == 0) or (
            name == "lambda2" and data.spatial is None
        )
        if absent:
            resolved[name] = override if override is not None else 0.0
            continue
        try:
            estimate = estimator()
            logger.info(f"Estimated {name}={estimate:.6g}")
        except DegenerateWeightError as e:
            if override is None:
                raise
            logger.warning(f"{e} (using override {override})")
            estimate = None
        if override is not None:
            logger.info(f"Using {name}={override:.6g} from configuration")
            resolved[name] = override
        else:
            resolved[name] = estimate
    return Weights(**resolved)
