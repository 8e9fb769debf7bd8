"""Atomic CSV/JSON writers and the run manifest."""

import io
import json
import os
import platform
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from geoproto import __version__


class Provenance(BaseModel):
    """Seed and config hash stamped on every output."""

    seed: int
    config_hash: str

    def comment(self) -> str:
        return f"# geoproto seed={self.seed} config_hash={self.config_hash}\n"


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def csv_text(frame: pd.DataFrame, provenance: Provenance | None = None) -> str:
    buffer = io.StringIO()
    if provenance is not None:
        buffer.write(provenance.comment())
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_csv(frame: pd.DataFrame, path: Path, provenance: Provenance | None = None) -> None:
    atomic_write_text(path, csv_text(frame, provenance))


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def json_text(payload: Any, provenance: Provenance | None = None) -> str:
    body = _jsonable(payload)
    if provenance is not None:
        if not isinstance(body, dict):
            body = {"result": body}
        body = {"seed": provenance.seed, "config_hash": provenance.config_hash, **body}
    return json.dumps(body, indent=2, sort_keys=False) + "\n"


def write_json(payload: Any, path: Path, provenance: Provenance | None = None) -> None:
    atomic_write_text(path, json_text(payload, provenance))


def read_csv(path: Path, **kwargs: Any) -> pd.DataFrame:
    """Read a CSV, skipping a leading provenance comment line if present."""
    with open(path, encoding="utf-8") as handle:
        stamped = handle.readline().startswith("# geoproto")
    return pd.read_csv(path, skiprows=1 if stamped else 0, **kwargs)


class RunManifest(BaseModel):
    """Record of one CLI invocation."""

    command: str
    seed: int
    config_hash: str
    versions: dict[str, str] = Field(default_factory=dict)
    outputs: list[str] = Field(default_factory=list)

    @classmethod
    def create(cls, command: str, provenance: Provenance, outputs: list[Path]) -> "RunManifest":
        return cls(
            command=command,
            seed=provenance.seed,
            config_hash=provenance.config_hash,
            versions={
                "geoproto": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
            },
            outputs=sorted(p.name for p in outputs),
        )

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "run-manifest.json"
        atomic_write_text(path, self.model_dump_json(indent=2) + "\n")
        return path
