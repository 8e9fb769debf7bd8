"""Synthetic life-insurance portfolios with planted cluster structure."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from geoproto.exceptions import ConfigurationError
from geoproto.output import Provenance, atomic_write_text, write_csv

logger = logging.getLogger(__name__)

# Cluster anchors: (latitude, longitude, state)
_ANCHORS = (
    (40.7128, -74.0060, "NY"),
    (34.0522, -118.2437, "CA"),
    (41.8781, -87.6298, "IL"),
    (29.7604, -95.3698, "TX"),
    (47.6062, -122.3321, "WA"),
    (25.7617, -80.1918, "FL"),
)


class SynthSpec(BaseModel):
    """Generator parameters; larger ``separation`` pulls clusters apart."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(default=3000, ge=1)
    clusters: int = Field(default=3, ge=1)
    separation: float = Field(default=4.0, gt=0)
    noise: float = Field(default=0.08, gt=0)
    q_low: float = Field(default=0.001, ge=0, le=1)
    q_high: float = Field(default=0.02, ge=0, le=1)
    mortality_multipliers: tuple[float, ...] = ()
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self) -> "SynthSpec":
        if self.n < self.clusters:
            raise ConfigurationError(f"n={self.n} is smaller than clusters={self.clusters}")
        if self.q_high < self.q_low:
            raise ConfigurationError(f"q_high ({self.q_high}) is below q_low ({self.q_low})")
        if self.mortality_multipliers and len(self.mortality_multipliers) != self.clusters:
            raise ConfigurationError("Give one mortality multiplier per cluster")
        if any(m < 0 for m in self.mortality_multipliers):
            raise ConfigurationError("Mortality multipliers must be non-negative")
        return self

    def multipliers(self) -> np.ndarray:
        return np.asarray(self.mortality_multipliers or (1.0,) * self.clusters)


def generate(spec: SynthSpec) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Portfolio table (all text) and the planted cluster of every policy."""
    rng = np.random.default_rng(spec.seed)
    n, clusters = spec.n, spec.clusters
    planted = rng.permutation(np.arange(n) % clusters)

    # Cluster centers spread evenly on a latent [0, 1] scale
    latent = np.linspace(0.0, 1.0, clusters) if clusters > 1 else np.array([0.5])
    spread = spec.noise / spec.separation
    age_scale = np.clip(latent[planted] + rng.normal(0.0, spread, n), 0.0, 1.0)
    face_scale = np.clip(latent[::-1][planted] + rng.normal(0.0, spread, n), 0.0, 1.0)
    issue_age = np.rint(20 + 50 * age_scale).astype(int)
    face_amount = np.rint(np.exp(np.log(25_000) + np.log(40) * face_scale)).astype(int)

    purity = 1.0 - 0.5 / (1.0 + spec.separation)
    cluster_ids = np.arange(clusters)
    gender_pick = np.where(rng.random(n) < purity, cluster_ids[planted] % 2, 1 - cluster_ids[planted] % 2)
    smoker_pick = np.where(
        rng.random(n) < purity, (cluster_ids[planted] // 2) % 2, 1 - (cluster_ids[planted] // 2) % 2
    )
    gender = np.array(["F", "M"])[gender_pick]
    smoker = np.array(["N", "S"])[smoker_pick]

    anchors = [_ANCHORS[c % len(_ANCHORS)] for c in range(clusters)]
    # Later rounds around the anchor list shift east so centers stay distinct
    offsets = np.array([2.0 * (c // len(_ANCHORS)) for c in range(clusters)])
    degrees = 2.0 / spec.separation
    latitude = np.clip(
        np.array([a[0] for a in anchors])[planted] + rng.normal(0.0, degrees, n), -89.9, 89.9
    )
    longitude = np.clip(
        np.array([a[1] for a in anchors])[planted] + offsets[planted] + rng.normal(0.0, degrees, n),
        -179.9,
        179.9,
    )
    state = np.array([a[2] for a in anchors])[planted]

    expected_rate = np.round(rng.uniform(spec.q_low, spec.q_high, n), 6)
    true_rate = np.clip(expected_rate * spec.multipliers()[planted], 0.0, 1.0)
    death = (rng.random(n) < true_rate).astype(int)

    ids = np.array([f"P{i:07d}" for i in range(n)])
    portfolio = pd.DataFrame(
        {
            "policy_id": ids,
            "issue_age": issue_age.astype(str),
            "face_amount": face_amount.astype(str),
            "gender": gender,
            "smoker": smoker,
            "latitude": [f"{v:.5f}" for v in latitude],
            "longitude": [f"{v:.5f}" for v in longitude],
            "state": state,
            "death": death.astype(str),
            "expected_rate": [f"{v:.6f}" for v in expected_rate],
        }
    )
    truth = pd.DataFrame({"policy_id": ids, "cluster": planted})
    return portfolio, truth


def pipeline_config(spec: SynthSpec, portfolio_name: str = "portfolio.csv") -> dict:
    """Run config that clusters the generated portfolio."""
    return {
        "schema_version": 1,
        "seed": spec.seed,
        "output_dir": "out",
        "data": {
            "path": portfolio_name,
            "id_column": "policy_id",
            "payload": ["state", "death", "expected_rate"],
        },
        "attributes": [
            {"kind": "numerical", "name": "issue_age"},
            {"kind": "numerical", "name": "face_amount", "normalization": "log_minmax"},
            {"kind": "categorical", "name": "gender", "levels": ["F", "M"]},
            {"kind": "categorical", "name": "smoker", "levels": ["N", "S"]},
            {"kind": "spatial", "name": "location", "latitude": "latitude", "longitude": "longitude"},
        ],
        "cluster": {"k": spec.clusters},
        "gap": {"k_max": max(6, spec.clusters + 1), "strata": ["smoker"]},
        "experience": {"face_amount": "face_amount", "death": "death", "expected_rate": "expected_rate"},
    }


def synth_portfolio(spec: SynthSpec, output_dir: Path, provenance: Provenance | None = None) -> list[Path]:
    """Write portfolio.csv, truth.csv and config.yaml into ``output_dir``."""
    output_dir = Path(output_dir)
    portfolio, truth = generate(spec)
    paths = [output_dir / "portfolio.csv", output_dir / "truth.csv", output_dir / "config.yaml"]
    write_csv(portfolio, paths[0], provenance)
    write_csv(truth, paths[1], provenance)
    atomic_write_text(paths[2], yaml.safe_dump(pipeline_config(spec), sort_keys=False))
    logger.info(
        f"Generated {spec.n} policies in {spec.clusters} clusters "
        f"({int(portfolio['death'].astype(int).sum())} deaths) under {output_dir}"
    )
    return paths
