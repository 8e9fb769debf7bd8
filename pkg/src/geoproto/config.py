"""Configuration management using pydantic-settings and YAML run configs."""

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from geoproto.cluster.kproto import SpatialRule
from geoproto.data.schema import AttributeDescriptor, BadRowPolicy, Schema
from geoproto.exceptions import ConfigurationError

SCHEMA_VERSION = 1


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="GEOPROTO_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    threads: int | None = Field(default=None, ge=1)
    log_level: str = "INFO"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    path: Path | None = None
    id_column: str | None = None
    payload: list[str] = Field(default_factory=list)
    on_bad_row: BadRowPolicy = BadRowPolicy.FAIL
    exclude: dict[str, list[str]] = Field(default_factory=dict)


class ClusterSection(_Section):
    k: int | None = Field(default=None, ge=1)
    restarts: int = Field(default=20, ge=1)
    max_iterations: int = Field(default=100, ge=1)
    spatial_rule: SpatialRule = SpatialRule.PAPER
    lambda1: float | None = Field(default=None, ge=0)
    lambda2: float | None = Field(default=None, ge=0)


class GapSection(_Section):
    k_max: int = Field(default=10, ge=1)
    B: int = Field(default=50, ge=1)
    sample_fraction: float = Field(default=0.10, gt=0, le=1)
    strata: list[str] = Field(default_factory=list)
    refit: bool = True


class ExperienceSection(_Section):
    face_amount: str = "face_amount"
    death: str = "death"
    expected_rate: str = "expected_rate"
    levels: list[float] = Field(default_factory=lambda: [0.90, 0.95])
    centering: Literal["null", "observed"] = "null"
    rate_table: Path | None = None
    rate_keys: list[str] = Field(default_factory=list)
    rate_column: str = "q"

    @field_validator("levels")
    @classmethod
    def _levels_in_unit_interval(cls, levels: list[float]) -> list[float]:
        for level in levels:
            if not 0 < level < 1:
                raise ValueError(f"confidence level {level} must lie in (0, 1)")
        return levels


class RunConfig(_Section):
    """Validated contents of a run-config YAML file."""

    schema_version: int
    seed: int = 0
    output_dir: Path = Path("geoproto-out")
    data: DataSection = Field(default_factory=DataSection)
    attributes: list[AttributeDescriptor] = Field(default_factory=list)
    cluster: ClusterSection = Field(default_factory=ClusterSection)
    gap: GapSection = Field(default_factory=GapSection)
    experience: ExperienceSection = Field(default_factory=ExperienceSection)

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, version: int) -> int:
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
        return version

    def build_schema(self) -> Schema:
        """Attribute list as a validated Schema."""
        if not self.attributes:
            raise ConfigurationError("Config key 'attributes' is required for this command")
        return Schema(attributes=self.attributes)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of this config."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_run_config(path: Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a YAML run config and apply dotted-key overrides (e.g. ``cluster.k``).

    Without a path, an empty version-1 config is used so that flag-only runs work.
    Overrides whose value is None are ignored.
    """
    raw: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Config file {path} is not valid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"Config file {path} must contain a mapping")
        raw = loaded
        # Relative input paths resolve against the config file's directory
        for section, key in (("data", "path"), ("experience", "rate_table")):
            node = raw.get(section)
            if isinstance(node, dict) and node.get(key):
                value = Path(node[key])
                if not value.is_absolute():
                    node[key] = str(Path(path).parent / value)

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration:\n{e}") from e
