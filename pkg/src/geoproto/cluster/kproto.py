"""k-prototypes clustering of mixed numerical, categorical and spatial records."""

import logging
import math
from enum import StrEnum
from typing import Any, Literal, NamedTuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from geoproto.cluster.distance import (
    WGS84,
    DistanceComponents,
    EarthModel,
    angle_sums,
    central_angle,
    component_distances,
)
from geoproto.data.dataset import Dataset
from geoproto.data.schema import denormalize_value
from geoproto.exceptions import ConfigurationError, EmptyClusterError
from geoproto.models import ClusteringModel, GeoPoint, MixedPoint, Prototype, Weights

logger = logging.getLogger(__name__)


class SpatialRule(StrEnum):
    PAPER = "paper"
    MEDOID = "medoid"


class KProtoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(ge=1)
    weights: Weights = Field(default_factory=Weights)
    max_iterations: int = Field(default=100, ge=1)
    restarts: int = Field(default=20, ge=1)
    spatial_rule: SpatialRule = SpatialRule.PAPER
    seed: int = 0
    empty_cluster_policy: Literal["reseed_farthest"] = "reseed_farthest"
    n_jobs: int | None = Field(default=None, ge=1)


class Assignment(NamedTuple):
    labels: np.ndarray
    distances: np.ndarray
    components: DistanceComponents


class CostBreakdown(NamedTuple):
    total: float
    numerical: float
    categorical: float
    spatial: float


def initialize(data: Dataset, k: int, seed: int) -> list[Prototype]:
    """Copy k distinct, uniformly drawn records as initial prototypes."""
    if k > data.n:
        raise ConfigurationError(f"k={k} exceeds the number of records ({data.n})")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(data.n, size=k, replace=False)
    return [data.record(int(i)) for i in chosen]


def assign(
    data: Dataset, prototypes: list[Prototype], w: Weights, earth: EarthModel = WGS84
) -> Assignment:
    """Assign every record to its nearest prototype; ties go to the lowest cluster index."""
    if not prototypes:
        raise ConfigurationError("At least one prototype is required")
    per_prototype = [component_distances(data, z, w, earth) for z in prototypes]
    totals = np.column_stack([c.total for c in per_prototype])
    labels = np.argmin(totals, axis=1)
    rows = np.arange(data.n)

    def gather(part: int) -> np.ndarray:
        return np.column_stack([c[part] for c in per_prototype])[rows, labels]

    return Assignment(
        labels=labels,
        distances=totals[rows, labels],
        components=DistanceComponents(gather(0), gather(1), gather(2)),
    )


def _closest_to_previous(coords: np.ndarray, previous: GeoPoint) -> GeoPoint:
    """Member coordinate nearest the previous prototype, the previous coordinate excluded."""
    others = coords[~((coords[:, 0] == previous.lat) & (coords[:, 1] == previous.lon))]
    if len(others) == 0:
        return previous
    angles = central_angle(others[:, 0], others[:, 1], previous.lat, previous.lon)
    best = others[int(np.argmin(angles))]
    return GeoPoint(lat=float(best[0]), lon=float(best[1]))


def _medoid(coords: np.ndarray, previous: GeoPoint | None) -> GeoPoint:
    """Coordinate minimizing the summed distance to all members.

    The previous prototype competes as a candidate and wins only when strictly
    better than every member coordinate, so the spatial cost of a fixed
    partition never increases.
    """
    points, counts = np.unique(coords, axis=0, return_counts=True)
    candidates = points
    if previous is not None:
        candidates = np.vstack([points, [previous.lat, previous.lon]])
    sums = angle_sums(candidates, points, counts.astype(np.float64))
    best = candidates[int(np.argmin(sums))]
    return GeoPoint(lat=float(best[0]), lon=float(best[1]))


def update_prototypes(
    data: Dataset,
    labels: np.ndarray,
    previous: list[Prototype],
    rule: SpatialRule = SpatialRule.PAPER,
) -> list[Prototype]:
    """Means for numericals, modes for categoricals, and the spatial rule's coordinate."""
    level_counts = data.schema.level_counts()
    updated = []
    for cluster, prev in enumerate(previous):
        members = np.flatnonzero(labels == cluster)
        if members.size == 0:
            raise EmptyClusterError(cluster)
        numerical = data.numerical[members].mean(axis=0)
        categorical = tuple(
            int(np.argmax(np.bincount(data.categorical[members, j], minlength=level_counts[j])))
            for j in range(data.categorical.shape[1])
        )
        location = None
        if data.spatial is not None:
            coords = data.spatial[members]
            if rule is SpatialRule.MEDOID:
                location = _medoid(coords, prev.location)
            else:
                location = _closest_to_previous(coords, prev.location)
        updated.append(
            MixedPoint(
                numerical=tuple(float(v) for v in numerical),
                categorical=categorical,
                location=location,
            )
        )
    return updated


def _repair_empty(
    data: Dataset, current: Assignment, prototypes: list[Prototype], k: int
) -> bool:
    """Reseed empty clusters with the record farthest from its prototype.

    Mutates ``current`` and ``prototypes`` in place. Returns True when repair is
    exhausted, i.e. no record can be moved without leaving a cluster empty or
    every candidate already sits on its prototype.
    """
    sizes = np.bincount(current.labels, minlength=k)
    for cluster in np.flatnonzero(sizes == 0):
        movable = sizes[current.labels] > 1
        if not movable.any():
            return True
        spread = np.where(movable, current.distances, -np.inf)
        i = int(np.argmax(spread))
        if spread[i] <= 0:
            return True
        logger.debug(f"Reseeding empty cluster {cluster} with record {i} (distance {spread[i]:.6g})")
        sizes[current.labels[i]] -= 1
        sizes[cluster] = 1
        current.labels[i] = cluster
        current.distances[i] = 0.0
        for part in current.components:
            part[i] = 0.0
        prototypes[cluster] = data.record(i)
    return False


def _single_run(data: Dataset, cfg: KProtoConfig, restart_index: int, earth: EarthModel) -> ClusteringModel:
    seed = cfg.seed + restart_index
    prototypes = initialize(data, cfg.k, seed)
    history: list[float] = []
    previous_labels = None
    converged = exhausted = False
    iterations = 0

    for iterations in range(1, cfg.max_iterations + 1):
        current = assign(data, prototypes, cfg.weights, earth)
        if np.bincount(current.labels, minlength=cfg.k).min() == 0:
            exhausted = _repair_empty(data, current, prototypes, cfg.k)
        history.append(math.fsum(current.distances))
        if exhausted:
            logger.warning(f"Restart {restart_index}: empty-cluster repair exhausted")
            break
        if previous_labels is not None and np.array_equal(current.labels, previous_labels):
            converged = True
            break
        if iterations == cfg.max_iterations:
            break
        prototypes = update_prototypes(data, current.labels, prototypes, cfg.spatial_rule)
        previous_labels = current.labels

    model = ClusteringModel(
        k=cfg.k,
        prototypes=prototypes,
        assignment=current.labels,
        weights=cfg.weights,
        cost_total=history[-1],
        cost_numerical=math.fsum(current.components.numerical),
        cost_categorical=math.fsum(current.components.categorical),
        cost_spatial=math.fsum(current.components.spatial),
        iterations=iterations,
        converged=converged,
        repair_exhausted=exhausted,
        restart_index=restart_index,
        seed=seed,
        cost_history=history,
    )
    logger.debug(
        f"Restart {restart_index}: cost {model.cost_total:.6g} after {iterations} iterations"
        f"{'' if converged else ' (not converged)'}"
    )
    return model


def fit(data: Dataset, cfg: KProtoConfig, earth: EarthModel = WGS84) -> ClusteringModel:
    """Run ``cfg.restarts`` independent k-prototypes runs and keep the cheapest.

    Restart r is seeded with ``cfg.seed + r``; ties on cost keep the lowest
    restart index, so the result does not depend on scheduling.
    """
    if data.n == 0:
        raise ConfigurationError("Cannot cluster an empty dataset")
    if cfg.k > data.n:
        raise ConfigurationError(f"k={cfg.k} exceeds the number of records ({data.n})")

    runs = Parallel(n_jobs=cfg.n_jobs or 1, prefer="threads")(
        delayed(_single_run)(data, cfg, r, earth) for r in range(cfg.restarts)
    )
    best = min(runs, key=lambda m: (m.cost_total, m.restart_index))
    logger.info(
        f"k={cfg.k}: best of {cfg.restarts} restarts is #{best.restart_index} "
        f"(cost {best.cost_total:.6g}, {best.iterations} iterations, converged={best.converged})"
    )
    return best


def recompute_cost(
    data: Dataset, model: ClusteringModel, w: Weights | None = None, earth: EarthModel = WGS84
) -> CostBreakdown:
    """Evaluate the clustering objective and its three parts from scratch."""
    w = w or model.weights
    labels = np.asarray(model.assignment)
    numerical = np.zeros(data.n)
    categorical = np.zeros(data.n)
    spatial = np.zeros(data.n)
    for cluster, prototype in enumerate(model.prototypes):
        members = labels == cluster
        if not members.any():
            continue
        parts = component_distances(data, prototype, w, earth)
        numerical[members] = parts.numerical[members]
        categorical[members] = parts.categorical[members]
        spatial[members] = parts.spatial[members]
    totals = numerical + categorical + spatial
    return CostBreakdown(
        total=math.fsum(totals),
        numerical=math.fsum(numerical),
        categorical=math.fsum(categorical),
        spatial=math.fsum(spatial),
    )


def describe_prototypes(model: ClusteringModel, data: Dataset) -> list[dict[str, Any]]:
    """Prototypes with raw-unit numericals, level names and coordinates in degrees."""
    described = []
    for cluster, prototype in enumerate(model.prototypes):
        entry: dict[str, Any] = {"cluster": cluster}
        for attr, params, value in zip(data.schema.numerical, data.params, prototype.numerical):
            entry[attr.name] = {"normalized": value, "raw": denormalize_value(value, params)}
        for attr, level in zip(data.schema.categorical, prototype.categorical):
            entry[attr.name] = attr.levels[level] if attr.levels else level
        if prototype.location is not None and data.schema.spatial is not None:
            lat, lon = prototype.location.to_degrees()
            entry[data.schema.spatial.latitude] = lat
            entry[data.schema.spatial.longitude] = lon
        described.append(entry)
    return described
