"""Tests for run configs, settings and output writers."""

import json
from pathlib import Path

import pandas as pd
import pytest

from geoproto.config import get_settings, load_run_config
from geoproto.exceptions import ConfigurationError
from geoproto.output import Provenance, RunManifest, atomic_write_text, json_text, read_csv, write_csv


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "conf" / "run.yaml"
    path.parent.mkdir()
    path.write_text(
        "schema_version: 1\n"
        "seed: 7\n"
        "data:\n"
        "  path: data/portfolio.csv\n"
        "attributes:\n"
        "  - {kind: numerical, name: age}\n"
        "  - {kind: categorical, name: sex}\n"
        "cluster:\n"
        "  k: 4\n"
    )
    return path


class TestRunConfig:
    def test_defaults_without_file(self):
        cfg = load_run_config(None)
        assert cfg.seed == 0
        assert cfg.cluster.k is None
        assert cfg.gap.B == 50 and cfg.gap.sample_fraction == 0.10
        assert cfg.experience.levels == [0.90, 0.95]

    def test_relative_paths_follow_the_file(self, config_file):
        cfg = load_run_config(config_file)
        assert cfg.data.path == config_file.parent / "data" / "portfolio.csv"

    def test_overrides(self, config_file):
        cfg = load_run_config(config_file, {"cluster.k": 6, "gap.B": 9, "seed": None})
        assert cfg.cluster.k == 6
        assert cfg.gap.B == 9
        assert cfg.seed == 7

    def test_unknown_keys_are_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("schema_version: 1\nclustr: {k: 3}\n")
        with pytest.raises(ConfigurationError, match="clustr"):
            load_run_config(path)

    def test_schema_version(self, tmp_path):
        path = tmp_path / "old.yaml"
        path.write_text("schema_version: 2\n")
        with pytest.raises(ConfigurationError, match="schema_version"):
            load_run_config(path)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("schema_version: [1\n")
        with pytest.raises(ConfigurationError, match="not valid YAML"):
            load_run_config(path)

    def test_levels_must_be_probabilities(self):
        with pytest.raises(ConfigurationError):
            load_run_config(None, {"experience.levels": [0.95, 1.2]})

    def test_schema_required(self):
        with pytest.raises(ConfigurationError, match="attributes"):
            load_run_config(None).build_schema()

    def test_hash_is_stable(self, config_file):
        first = load_run_config(config_file).config_hash()
        assert first == load_run_config(config_file).config_hash()
        assert first != load_run_config(config_file, {"seed": 8}).config_hash()
        assert len(first) == 64


class TestSettings:
    def test_environment(self, monkeypatch):
        monkeypatch.setenv("GEOPROTO_THREADS", "3")
        monkeypatch.setenv("GEOPROTO_LOG_LEVEL", "debug")
        settings = get_settings()
        assert settings.threads == 3
        assert settings.log_level == "debug"

    def test_defaults(self):
        assert get_settings().threads is None


class TestOutput:
    provenance = Provenance(seed=3, config_hash="f00")

    def test_csv_stamp_round_trip(self, tmp_path):
        path = tmp_path / "nested" / "table.csv"
        frame = pd.DataFrame({"a": [1, 2], "b": ["x", "y"]})
        write_csv(frame, path, self.provenance)
        assert path.read_text().splitlines()[0] == "# geoproto seed=3 config_hash=f00"
        pd.testing.assert_frame_equal(read_csv(path), frame)

    def test_unstamped_csv(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("a\n1\n")
        assert read_csv(path)["a"].tolist() == [1]

    def test_json_carries_provenance(self):
        body = json.loads(json_text({"value": 1}, self.provenance))
        assert body == {"seed": 3, "config_hash": "f00", "value": 1}
        assert json.loads(json_text([1, 2], self.provenance))["result"] == [1, 2]

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old")
        atomic_write_text(target, "new")
        assert target.read_text() == "new"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]

    def test_manifest(self, tmp_path):
        manifest = RunManifest.create("cluster", self.provenance, [Path("b.csv"), tmp_path / "a.json"])
        path = manifest.write(tmp_path)
        body = json.loads(path.read_text())
        assert body["command"] == "cluster"
        assert body["outputs"] == ["a.json", "b.csv"]
        assert {"geoproto", "python", "numpy", "pandas"} <= set(body["versions"])
        assert "time" not in path.read_text()
