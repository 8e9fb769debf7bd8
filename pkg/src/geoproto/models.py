"""Data models for geoproto."""

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from geoproto.exceptions import InvalidCoordinateError


class GeoPoint(BaseModel):
    """A location on the Earth in radians."""

    model_config = ConfigDict(frozen=True)

    lat: float
    lon: float

    @model_validator(mode="after")
    def _check_range(self) -> "GeoPoint":
        if math.isnan(self.lat) or math.isnan(self.lon):
            raise InvalidCoordinateError("Coordinates must not be NaN")
        if not -math.pi / 2 <= self.lat <= math.pi / 2:
            raise InvalidCoordinateError(f"Latitude {self.lat} rad outside [-pi/2, pi/2]")
        if not -math.pi <= self.lon <= math.pi:
            raise InvalidCoordinateError(f"Longitude {self.lon} rad outside [-pi, pi]")
        return self

    @classmethod
    def from_degrees(cls, lat: float, lon: float) -> "GeoPoint":
        return cls(lat=math.radians(lat), lon=math.radians(lon))

    def to_degrees(self) -> tuple[float, float]:
        return math.degrees(self.lat), math.degrees(self.lon)


class MixedPoint(BaseModel):
    """A record or prototype: normalized numericals, level indices, optional location."""

    model_config = ConfigDict(frozen=True)

    numerical: tuple[float, ...] = ()
    categorical: tuple[int, ...] = ()
    location: GeoPoint | None = None

    @field_validator("numerical")
    @classmethod
    def _finite(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(v) for v in values):
            raise ValueError("numerical components must be finite")
        return values


# The center object of a cluster has the same shape as a record.
Prototype = MixedPoint


class Weights(BaseModel):
    """Balance weights of the mixed dissimilarity."""

    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    lambda2: float = Field(default=0.0, ge=0, allow_inf_nan=False)


class LambdaEstimate(BaseModel):
    """Data-driven balance weights and the statistics they derive from."""

    lambda1: float = Field(ge=0)
    lambda2: float = Field(ge=0)
    numer_avg_variance: float
    categorical_avg_gini: float
    spatial_distance_variance: float
    center: GeoPoint | None = None

    def weights(self) -> Weights:
        return Weights(lambda1=self.lambda1, lambda2=self.lambda2)


class ClusteringModel(BaseModel):
    """Result of a k-prototypes fit."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    k: int = Field(ge=1)
    prototypes: list[MixedPoint]
    assignment: np.ndarray = Field(exclude=True, repr=False)
    weights: Weights
    cost_total: float
    cost_numerical: float
    cost_categorical: float
    cost_spatial: float
    iterations: int = 0
    converged: bool = False
    repair_exhausted: bool = False
    restart_index: int = 0
    seed: int = 0
    cost_history: list[float] = Field(default_factory=list)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


class GapRow(BaseModel):
    """Gap statistic quantities for one cluster count."""

    k: int
    log_wk: float | None
    expected_log_wk_ref: float | None
    sd_k: float | None
    s_k: float | None
    gap_k: float | None
    criterion: float | None = Field(
        default=None, description="Gap(k) - (Gap(k+1) - s(k+1)); selection needs >= 0"
    )


class GapProfile(BaseModel):
    """Gap statistic over a range of k and the selected cluster count."""

    rows: list[GapRow]
    B: int
    chosen_k: int | None
    seed: int
    sample_size: int
    weights: Weights
    diagnostics: list[str] = Field(default_factory=list)

    @property
    def k_range(self) -> list[int]:
        return [row.k for row in self.rows]


class ConfidenceInterval(BaseModel):
    """Normal confidence interval of an A/E ratio at one level."""

    level: float
    z: float
    lower: float
    upper: float
    center: float
    position: Literal["below", "inside", "above"]

    @computed_field
    @property
    def significant(self) -> bool:
        return self.position != "inside"


class LyapunovDiagnostics(BaseModel):
    """Advisory checks of the CLT premise behind the A/E intervals."""

    n: int
    inf_variance: float
    sup_third_moment: float
    zero_variance_records: int
    flagged_ids: list[str] = Field(default_factory=list)

    @computed_field
    @property
    def premise_weakened(self) -> bool:
        return self.zero_variance_records > 0


class ClusterExperience(BaseModel):
    """Actual-to-expected aggregates for one cluster (or the whole portfolio)."""

    cluster: int | None
    n: int
    actual: float = Field(ge=0)
    expected: float = Field(gt=0)
    ratio: float = Field(ge=0)
    variance: float = Field(ge=0)
    intervals: list[ConfidenceInterval] = Field(default_factory=list)
    lyapunov: LyapunovDiagnostics | None = None

    @computed_field
    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @computed_field
    @property
    def label(self) -> str:
        return "portfolio" if self.cluster is None else str(self.cluster)


class ExperienceReport(BaseModel):
    """Per-cluster A/E results plus the portfolio total."""

    clusters: list[ClusterExperience]
    portfolio: ClusterExperience
    levels: list[float]
    centering: Literal["null", "observed"] = "null"
