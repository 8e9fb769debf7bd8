"""Tests for the synthetic portfolio generator."""

import numpy as np
import pytest
import yaml
from sklearn.metrics import adjusted_rand_score

from geoproto.cluster.kproto import KProtoConfig, fit
from geoproto.cluster.lambdas import resolve_weights
from geoproto.config import load_run_config
from geoproto.exceptions import ConfigurationError
from geoproto.mortality.synth import SynthSpec, generate, synth_portfolio
from geoproto.output import Provenance, read_csv


class TestGenerate:
    def test_shape_and_columns(self):
        portfolio, truth = generate(SynthSpec(n=120, clusters=4, seed=2))
        assert len(portfolio) == len(truth) == 120
        assert portfolio.columns.tolist() == [
            "policy_id", "issue_age", "face_amount", "gender", "smoker",
            "latitude", "longitude", "state", "death", "expected_rate",
        ]
        assert portfolio["policy_id"].iloc[0] == "P0000000"
        assert np.bincount(truth["cluster"]).tolist() == [30, 30, 30, 30]
        ages = portfolio["issue_age"].astype(int)
        assert ages.between(20, 70).all()
        rates = portfolio["expected_rate"].astype(float)
        assert rates.between(0.001, 0.02).all()

    def test_zero_rates_mean_no_deaths(self):
        portfolio, _ = generate(SynthSpec(n=500, q_low=0.0, q_high=0.0, seed=1))
        assert (portfolio["death"] == "0").all()

    def test_multipliers_shift_mortality(self):
        spec = SynthSpec(n=6000, clusters=2, q_low=0.05, q_high=0.05, mortality_multipliers=(0.0, 2.0), seed=3)
        portfolio, truth = generate(spec)
        deaths = portfolio["death"].astype(int).to_numpy()
        assert deaths[truth["cluster"].to_numpy() == 0].sum() == 0
        assert deaths[truth["cluster"].to_numpy() == 1].mean() == pytest.approx(0.1, abs=0.02)

    def test_deterministic(self):
        first, _ = generate(SynthSpec(n=200, seed=7))
        second, _ = generate(SynthSpec(n=200, seed=7))
        assert first.equals(second)
        assert not first.equals(generate(SynthSpec(n=200, seed=8))[0])

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n": 2, "clusters": 3},
            {"q_low": 0.2, "q_high": 0.1},
            {"clusters": 2, "mortality_multipliers": (1.0,)},
            {"clusters": 1, "mortality_multipliers": (-1.0,)},
        ],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ConfigurationError):
            SynthSpec(**kwargs)


class TestWrite:
    def test_files_and_config(self, tmp_path):
        provenance = Provenance(seed=4, config_hash="abc")
        paths = synth_portfolio(SynthSpec(n=90, seed=4), tmp_path, provenance)
        assert [p.name for p in paths] == ["portfolio.csv", "truth.csv", "config.yaml"]
        assert paths[0].read_text(encoding="utf-8").startswith("# geoproto seed=4 config_hash=abc\n")
        assert len(read_csv(paths[0], dtype=str)) == 90

        cfg = load_run_config(paths[2])
        assert cfg.data.path == tmp_path / "portfolio.csv"
        assert cfg.cluster.k == 3
        assert [a.name for a in cfg.build_schema().attributes][:2] == ["issue_age", "face_amount"]
        assert yaml.safe_load(paths[2].read_text())["gap"]["strata"] == ["smoker"]

    def test_byte_identical_reruns(self, tmp_path):
        spec = SynthSpec(n=150, seed=9)
        first = synth_portfolio(spec, tmp_path / "a")
        second = synth_portfolio(spec, tmp_path / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()


def test_planted_clusters_are_recovered(planted):
    data, truth = planted
    model = fit(data, KProtoConfig(k=3, weights=resolve_weights(data), restarts=10, seed=1))
    assert adjusted_rand_score(truth, model.assignment) >= 0.95
