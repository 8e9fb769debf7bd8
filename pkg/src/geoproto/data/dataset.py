"""Immutable mixed-type dataset and CSV ingestion."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from geoproto.data.schema import (
    BadRowPolicy,
    Normalization,
    NormalizationParams,
    Schema,
)
from geoproto.exceptions import IngestError, SchemaMismatchError
from geoproto.models import GeoPoint, MixedPoint
from geoproto.output import read_csv, write_csv

logger = logging.getLogger(__name__)

_NORMALIZED_TOLERANCE = 1e-12


class IngestOptions(BaseModel):
    """How rows are read, filtered and passed through."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id_column: str | None = None
    payload: tuple[str, ...] = ()
    on_bad_row: BadRowPolicy = BadRowPolicy.FAIL
    exclude: dict[str, tuple[str, ...]] = Field(default_factory=dict)


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Records conforming to a fitted Schema.

    Numerical values are normalized to [0, 1], categorical values are level
    indices and the spatial pair is (lat, lon) in radians. ``raw`` keeps the
    ingested text of the id, schema and payload columns.
    """

    schema: Schema
    params: tuple[NormalizationParams, ...]
    record_ids: np.ndarray
    numerical: np.ndarray
    categorical: np.ndarray
    spatial: np.ndarray | None = None
    raw: pd.DataFrame | None = field(default=None, repr=False)
    payload_columns: tuple[str, ...] = ()
    skipped_rows: int = 0

    def __post_init__(self) -> None:
        n = len(self.record_ids)
        d1 = len(self.schema.numerical)
        m = len(self.schema.categorical)
        numerical = _frozen(self.numerical, np.float64).reshape(n, d1)
        categorical = _frozen(self.categorical, np.int64).reshape(n, m)
        object.__setattr__(self, "record_ids", _frozen(self.record_ids, object))
        object.__setattr__(self, "numerical", numerical)
        object.__setattr__(self, "categorical", categorical)

        if len(self.params) != d1:
            raise SchemaMismatchError("One NormalizationParams entry per numerical attribute")
        if numerical.size and (
            numerical.min() < -_NORMALIZED_TOLERANCE or numerical.max() > 1 + _NORMALIZED_TOLERANCE
        ):
            raise SchemaMismatchError("Normalized numerical values must lie in [0, 1]")
        for j, count in enumerate(self.schema.level_counts()):
            column = categorical[:, j]
            if column.size and (column.min() < 0 or column.max() >= count):
                name = self.schema.categorical[j].name
                raise SchemaMismatchError(f"Level index out of range for '{name}'")

        if self.schema.spatial is None:
            if self.spatial is not None:
                raise SchemaMismatchError("Spatial values given for a schema without a spatial pair")
        else:
            if self.spatial is None:
                raise SchemaMismatchError("Schema has a spatial pair but no coordinates were given")
            spatial = _frozen(self.spatial, np.float64).reshape(n, 2)
            object.__setattr__(self, "spatial", spatial)

    @property
    def n(self) -> int:
        return len(self.record_ids)

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> MixedPoint:
        location = None
        if self.spatial is not None:
            location = GeoPoint(lat=float(self.spatial[i, 0]), lon=float(self.spatial[i, 1]))
        return MixedPoint(
            numerical=tuple(float(v) for v in self.numerical[i]),
            categorical=tuple(int(v) for v in self.categorical[i]),
            location=location,
        )

    def level_counts(self, j: int) -> np.ndarray:
        """Observed count of every level of categorical attribute j."""
        return np.bincount(self.categorical[:, j], minlength=self.schema.level_counts()[j])

    def take(self, indices: np.ndarray) -> "Dataset":
        """Subset of records in the given order, sharing schema and normalization."""
        indices = np.asarray(indices, dtype=np.intp)
        raw = None if self.raw is None else self.raw.iloc[indices].reset_index(drop=True)
        return Dataset(
            schema=self.schema,
            params=self.params,
            record_ids=self.record_ids[indices],
            numerical=self.numerical[indices],
            categorical=self.categorical[indices],
            spatial=None if self.spatial is None else self.spatial[indices],
            raw=raw,
            payload_columns=self.payload_columns,
        )

    def payload(self, column: str) -> pd.Series:
        """Raw text of a passed-through column."""
        if self.raw is None or column not in self.raw.columns:
            raise IngestError(f"Payload column '{column}' is not available", column=column)
        return self.raw[column]


def ingest_frame(
    frame: pd.DataFrame, schema: Schema, options: IngestOptions | None = None
) -> Dataset:
    """Validate, filter and normalize a table of raw values."""
    options = options or IngestOptions()
    if len(frame) == 0:
        raise IngestError("Input has no data rows")
    frame = frame.astype(str)

    required = list(schema.columns()) + list(options.payload) + list(options.exclude)
    if options.id_column:
        required.append(options.id_column)
    missing = [c for c in dict.fromkeys(required) if c not in frame.columns]
    if missing:
        raise IngestError(f"Missing column(s): {', '.join(missing)}")

    # CSV line numbers (header is line 1) survive filtering for diagnostics
    lines = np.arange(len(frame)) + 2
    if options.exclude:
        keep = np.ones(len(frame), dtype=bool)
        for column, values in options.exclude.items():
            keep &= ~frame[column].str.strip().isin(values).to_numpy()
        excluded = int((~keep).sum())
        if excluded:
            logger.info(f"Excluded {excluded} rows by filter {dict(options.exclude)}")
        frame = frame[keep].reset_index(drop=True)
        lines = lines[keep]
        if len(frame) == 0:
            raise IngestError("No rows left after exclusion filter")

    n = len(frame)
    bad = np.zeros(n, dtype=bool)
    first_problem: dict[int, tuple[str, str]] = {}
    reasons: Counter[str] = Counter()

    def flag(mask: np.ndarray, column: str, message: str) -> None:
        nonlocal bad
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return
        reasons[message] += int(mask.sum())
        for pos in np.flatnonzero(mask & ~bad)[:1]:
            first_problem.setdefault(int(pos), (column, message))
        bad |= mask

    numeric_values: dict[str, np.ndarray] = {}
    for attr in schema.numerical:
        values = pd.to_numeric(frame[attr.name].str.strip(), errors="coerce").to_numpy(np.float64)
        unparseable = ~np.isfinite(values)
        flag(unparseable, attr.name, "unparseable or missing numeric value")
        if attr.normalization is Normalization.LOG_MINMAX:
            flag(~unparseable & (values <= 0), attr.name, "non-positive value under log normalization")
        numeric_values[attr.name] = values

    level_text: dict[str, pd.Series] = {}
    for attr in schema.categorical:
        text = frame[attr.name].str.strip()
        empty = (text == "").to_numpy()
        flag(empty, attr.name, "missing categorical value")
        if attr.levels is not None:
            flag(~text.isin(attr.levels).to_numpy() & ~empty, attr.name, "undeclared level")
        level_text[attr.name] = text

    coordinates = None
    if schema.spatial is not None:
        coordinates = []
        for column, bound in ((schema.spatial.latitude, 90.0), (schema.spatial.longitude, 180.0)):
            values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(np.float64)
            unparseable = ~np.isfinite(values)
            flag(unparseable, column, "unparseable or missing coordinate")
            flag(~unparseable & (np.abs(values) > bound), column, f"coordinate outside [-{bound:g}, {bound:g}]")
            coordinates.append(values)

    if options.id_column:
        ids = frame[options.id_column].str.strip()
        flag(ids.duplicated(keep="first").to_numpy(), options.id_column, "duplicate record id")
        record_ids = ids.to_numpy(dtype=object)
    else:
        record_ids = (lines - 2).astype(str).astype(object)

    skipped = 0
    if bad.any():
        if options.on_bad_row is BadRowPolicy.FAIL:
            pos = min(first_problem)
            column, message = first_problem[pos]
            raise IngestError(message, row=int(lines[pos]), column=column)
        skipped = int(bad.sum())
        logger.warning(f"Skipped {skipped} invalid rows: {dict(reasons)}")

    keep = ~bad
    if not keep.any():
        raise IngestError("No valid rows")

    params = []
    columns = []
    for attr in schema.numerical:
        values = numeric_values[attr.name][keep]
        fitted = NormalizationParams.fit(attr.name, attr.normalization, values)
        logger.debug(f"Normalization of '{attr.name}': [{fitted.min}, {fitted.max}] ({fitted.mode})")
        params.append(fitted)
        columns.append(fitted.transform(values))
    numerical = np.column_stack(columns) if columns else np.empty((int(keep.sum()), 0))

    levels: dict[str, tuple[str, ...]] = {}
    codes = []
    for attr in schema.categorical:
        text = level_text[attr.name][keep]
        found = attr.levels if attr.levels is not None else tuple(sorted(text.unique()))
        levels[attr.name] = found
        codes.append(pd.Categorical(text, categories=list(found)).codes.astype(np.int64))
    categorical = np.column_stack(codes) if codes else np.empty((int(keep.sum()), 0), np.int64)

    spatial = None
    if coordinates is not None:
        spatial = np.radians(np.column_stack([coordinates[0][keep], coordinates[1][keep]]))

    raw_columns = list(
        dict.fromkeys(([options.id_column] if options.id_column else []) + schema.columns() + list(options.payload))
    )
    raw = frame.loc[keep, raw_columns].reset_index(drop=True)

    data = Dataset(
        schema=schema.with_levels(levels),
        params=tuple(params),
        record_ids=record_ids[keep],
        numerical=numerical,
        categorical=categorical,
        spatial=spatial,
        raw=raw,
        payload_columns=tuple(options.payload),
        skipped_rows=skipped,
    )
    logger.info(f"Ingested {data.n} records ({skipped} skipped)")
    return data


def ingest_csv(path: Path, schema: Schema, options: IngestOptions | None = None) -> Dataset:
    """Read a UTF-8 CSV with a header row into a Dataset.

    A leading provenance comment line written by geoproto is skipped.
    """
    try:
        frame = read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise IngestError(f"Cannot read {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise IngestError(f"{path} is empty") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestError(f"{path} is not a valid UTF-8 CSV: {e}") from e
    logger.info(f"Read {len(frame)} rows from {path}")
    return ingest_frame(frame, schema, options)


def export_csv(data: Dataset, path: Path) -> None:
    """Write the ingested raw text back out (ids, schema columns, payload)."""
    if data.raw is None:
        raise IngestError("Dataset has no raw columns to export")
    write_csv(data.raw, path)


def summarize(data: Dataset) -> pd.DataFrame:
    """Per-attribute summary: min/mean/max for numericals, level frequencies for categoricals."""
    rows = []
    for j, attr in enumerate(data.schema.numerical):
        if data.raw is not None and attr.name in data.raw.columns:
            values = pd.to_numeric(data.raw[attr.name]).to_numpy(np.float64)
        else:
            values = data.params[j].inverse(data.numerical[:, j])
        rows.append(
            {"attribute": attr.name, "kind": "numerical", "level": "", "count": data.n,
             "frequency": None, "min": values.min(), "mean": values.mean(), "max": values.max()}
        )
    for j, attr in enumerate(data.schema.categorical):
        counts = data.level_counts(j)
        for level, count in zip(attr.levels or (), counts):
            rows.append(
                {"attribute": attr.name, "kind": "categorical", "level": level, "count": int(count),
                 "frequency": count / data.n, "min": None, "mean": None, "max": None}
            )
    if data.spatial is not None and data.schema.spatial is not None:
        degrees = np.degrees(data.spatial)
        for j, column in enumerate((data.schema.spatial.latitude, data.schema.spatial.longitude)):
            rows.append(
                {"attribute": column, "kind": "spatial", "level": "", "count": data.n,
                 "frequency": None, "min": degrees[:, j].min(), "mean": degrees[:, j].mean(),
                 "max": degrees[:, j].max()}
            )
    return pd.DataFrame(rows, columns=["attribute", "kind", "level", "count", "frequency", "min", "mean", "max"])
