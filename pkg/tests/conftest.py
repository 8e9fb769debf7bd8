"""Shared fixtures."""

import numpy as np
import pandas as pd
import pytest

from geoproto.config import get_settings
from geoproto.data.dataset import Dataset, IngestOptions, ingest_frame
from geoproto.data.schema import (
    CategoricalAttribute,
    Normalization,
    NormalizationParams,
    NumericalAttribute,
    Schema,
    SpatialAttribute,
)
from geoproto.mortality.synth import SynthSpec, generate, pipeline_config


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    monkeypatch.delenv("GEOPROTO_THREADS", raising=False)
    monkeypatch.delenv("GEOPROTO_LOG_LEVEL", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def mixed_schema() -> Schema:
    return Schema(
        attributes=(
            NumericalAttribute(name="age"),
            NumericalAttribute(name="face", normalization=Normalization.LOG_MINMAX),
            CategoricalAttribute(name="sex", levels=("F", "M")),
            CategoricalAttribute(name="plan"),
            SpatialAttribute(),
        )
    )


def random_frame(rng: np.random.Generator, n: int) -> pd.DataFrame:
    """Random mixed records as CSV-like text."""
    return pd.DataFrame(
        {
            "id": [f"r{i}" for i in range(n)],
            "age": rng.integers(20, 80, n).astype(str),
            "face": np.round(rng.uniform(1_000, 500_000, n), 2).astype(str),
            "sex": rng.choice(["F", "M"], n),
            "plan": rng.choice(["Term", "Whole", "Universal"], n),
            "latitude": np.round(rng.uniform(25, 49, n), 4).astype(str),
            "longitude": np.round(rng.uniform(-124, -67, n), 4).astype(str),
        }
    )


@pytest.fixture
def make_dataset(mixed_schema):
    def build(n: int = 50, seed: int = 0) -> Dataset:
        frame = random_frame(np.random.default_rng(seed), n)
        return ingest_frame(frame, mixed_schema, IngestOptions(id_column="id"))

    return build


@pytest.fixture
def small_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": ["a", "b", "c", "d"],
            "age": ["30", "40", "50", "60"],
            "face": ["1000", "10000", "100000", "1000000"],
            "sex": ["F", "M", "F", "F"],
            "plan": ["Term", "Term", "Whole", "Term"],
            "latitude": ["40.0", "40.0", "34.0", "34.0"],
            "longitude": ["-74.0", "-74.0", "-118.0", "-118.0"],
        }
    )


@pytest.fixture
def small_data(small_frame, mixed_schema) -> Dataset:
    return ingest_frame(small_frame, mixed_schema, IngestOptions(id_column="id"))


@pytest.fixture(scope="session")
def planted():
    """Synthetic portfolio with three planted clusters, ingested."""
    spec = SynthSpec(n=600, clusters=3, seed=11)
    portfolio, truth = generate(spec)
    config = pipeline_config(spec)
    schema = Schema.model_validate({"attributes": config["attributes"]})
    options = IngestOptions(id_column="policy_id", payload=tuple(config["data"]["payload"]))
    return ingest_frame(portfolio, schema, options), truth["cluster"].to_numpy()


@pytest.fixture
def build_dataset():
    """Dataset straight from normalized arrays; coordinates in degrees."""

    def build(numerical, categorical=None, coordinates=None, levels=("A", "B", "C")) -> Dataset:
        numerical = np.asarray(numerical, dtype=np.float64)
        n = numerical.shape[0]
        numerical = numerical.reshape(n, -1)
        categorical = (
            np.empty((n, 0), dtype=np.int64) if categorical is None else np.asarray(categorical).reshape(n, -1)
        )
        attributes = [NumericalAttribute(name=f"x{j}") for j in range(numerical.shape[1])]
        attributes += [CategoricalAttribute(name=f"c{j}", levels=levels) for j in range(categorical.shape[1])]
        spatial = None
        if coordinates is not None:
            attributes.append(SpatialAttribute())
            spatial = np.radians(np.asarray(coordinates, dtype=np.float64))
        params = tuple(
            NormalizationParams(name=f"x{j}", mode=Normalization.MINMAX, min=0.0, max=1.0)
            for j in range(numerical.shape[1])
        )
        return Dataset(
            schema=Schema(attributes=tuple(attributes)),
            params=params,
            record_ids=np.array([str(i) for i in range(n)], dtype=object),
            numerical=numerical,
            categorical=categorical,
            spatial=spatial,
        )

    return build
