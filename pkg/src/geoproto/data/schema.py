"""Mixed-attribute schema definition and [0, 1] normalization."""

import math
from enum import StrEnum
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from geoproto.exceptions import NormalizationError, SchemaError


class Normalization(StrEnum):
    MINMAX = "minmax"
    LOG_MINMAX = "log_minmax"


class BadRowPolicy(StrEnum):
    FAIL = "fail"
    SKIP = "skip"


class NumericalAttribute(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["numerical"] = "numerical"
    name: str
    normalization: Normalization = Normalization.MINMAX


class CategoricalAttribute(BaseModel):
    """Categorical attribute; levels are discovered at ingestion unless declared."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["categorical"] = "categorical"
    name: str
    levels: tuple[str, ...] | None = None

    @field_validator("levels")
    @classmethod
    def _non_empty_unique(cls, levels: tuple[str, ...] | None) -> tuple[str, ...] | None:
        if levels is None:
            return None
        if not levels:
            raise ValueError("declared levels must not be empty")
        if len(set(levels)) != len(levels):
            raise ValueError("declared levels must be unique")
        return levels


class SpatialAttribute(BaseModel):
    """Latitude/longitude pair, decimal degrees on input."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["spatial"] = "spatial"
    name: str = "location"
    latitude: str = "latitude"
    longitude: str = "longitude"


AttributeDescriptor = Annotated[
    NumericalAttribute | CategoricalAttribute | SpatialAttribute,
    Field(discriminator="kind"),
]

_KIND_ORDER = {"numerical": 0, "categorical": 1, "spatial": 2}


class Schema(BaseModel):
    """Ordered attributes: numericals first, then categoricals, then one spatial pair."""

    model_config = ConfigDict(frozen=True)

    attributes: tuple[AttributeDescriptor, ...]

    @model_validator(mode="after")
    def _check_layout(self) -> "Schema":
        if not self.attributes:
            raise SchemaError("Schema needs at least one attribute")
        ranks = [_KIND_ORDER[a.kind] for a in self.attributes]
        if ranks != sorted(ranks):
            raise SchemaError(
                "Attributes must be ordered numerical, then categorical, then spatial"
            )
        if ranks.count(2) > 1:
            raise SchemaError("At most one spatial pair is allowed")
        columns = self.columns()
        duplicates = sorted({c for c in columns if columns.count(c) > 1})
        if duplicates:
            raise SchemaError(f"Duplicate column names: {', '.join(duplicates)}")
        return self

    @property
    def numerical(self) -> tuple[NumericalAttribute, ...]:
        return tuple(a for a in self.attributes if isinstance(a, NumericalAttribute))

    @property
    def categorical(self) -> tuple[CategoricalAttribute, ...]:
        return tuple(a for a in self.attributes if isinstance(a, CategoricalAttribute))

    @property
    def spatial(self) -> SpatialAttribute | None:
        for a in self.attributes:
            if isinstance(a, SpatialAttribute):
                return a
        return None

    def columns(self) -> list[str]:
        """Raw CSV columns this schema reads, in schema order."""
        names: list[str] = []
        for a in self.attributes:
            if isinstance(a, SpatialAttribute):
                names.extend([a.latitude, a.longitude])
            else:
                names.append(a.name)
        return names

    def categorical_position(self, name: str) -> int:
        for i, a in enumerate(self.categorical):
            if a.name == name:
                return i
        raise SchemaError(f"'{name}' is not a categorical attribute")

    def level_counts(self) -> tuple[int, ...]:
        counts = []
        for a in self.categorical:
            if a.levels is None:
                raise SchemaError(f"Levels of '{a.name}' are not fitted")
            counts.append(len(a.levels))
        return tuple(counts)

    def with_levels(self, levels: dict[str, tuple[str, ...]]) -> "Schema":
        """Copy with categorical level sets replaced."""
        attributes = [
            a.model_copy(update={"levels": levels[a.name]})
            if isinstance(a, CategoricalAttribute) and a.name in levels
            else a
            for a in self.attributes
        ]
        return Schema(attributes=tuple(attributes))


class NormalizationParams(BaseModel):
    """Fitted range of one numerical attribute (on the log scale for LOG_MINMAX)."""

    model_config = ConfigDict(frozen=True)

    name: str
    mode: Normalization
    min: float = Field(allow_inf_nan=False)
    max: float = Field(allow_inf_nan=False)

    @model_validator(mode="after")
    def _ordered(self) -> "NormalizationParams":
        if self.max < self.min:
            raise SchemaError(f"'{self.name}': max {self.max} < min {self.min}")
        return self

    @classmethod
    def fit(cls, name: str, mode: Normalization, values: np.ndarray) -> "NormalizationParams":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise SchemaError(f"Cannot fit normalization of '{name}' on no values")
        if mode is Normalization.LOG_MINMAX:
            if np.any(values <= 0):
                raise SchemaError(f"'{name}': log normalization needs strictly positive values")
            values = np.log(values)
        return cls(name=name, mode=mode, min=float(values.min()), max=float(values.max()))

    @property
    def constant(self) -> bool:
        return self.max == self.min

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Vectorized normalization of values already validated as in range."""
        values = np.asarray(values, dtype=np.float64)
        if self.mode is Normalization.LOG_MINMAX:
            values = np.log(values)
        if self.constant:
            return np.zeros_like(values)
        return (values - self.min) / (self.max - self.min)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Map normalized values back to raw units."""
        scaled = self.min + np.asarray(values, dtype=np.float64) * (self.max - self.min)
        if self.mode is Normalization.LOG_MINMAX:
            return np.exp(scaled)
        return scaled


_RANGE_TOLERANCE = 1e-12


def normalize_value(x: float, params: NormalizationParams | None, clamp: bool = False) -> float:
    """Normalize one raw value onto [0, 1].

    Without ``clamp``, values outside the fitted range (or non-positive values
    under log normalization) are rejected; with it they are clipped to 0 or 1.
    """
    if params is None:
        raise NormalizationError("Normalization parameters are not fitted")
    if params.mode is Normalization.LOG_MINMAX:
        if x <= 0:
            if not clamp:
                raise NormalizationError(
                    f"'{params.name}': log normalization needs x > 0, got {x}"
                )
            return 0.0
        scaled = math.log(x)
    else:
        scaled = float(x)

    if params.constant:
        y = 0.0 if scaled == params.min else (-math.inf if scaled < params.min else math.inf)
    else:
        y = (scaled - params.min) / (params.max - params.min)

    if -_RANGE_TOLERANCE <= y <= 1 + _RANGE_TOLERANCE:
        return min(max(y, 0.0), 1.0)
    if not clamp:
        raise NormalizationError(f"'{params.name}': {x} is outside the fitted range")
    return 0.0 if y < 0 else 1.0


def denormalize_value(y: float, params: NormalizationParams) -> float:
    """Inverse of normalize_value."""
    return float(params.inverse(np.asarray(y)))
