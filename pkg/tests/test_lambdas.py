"""Tests for the balance weight estimators."""

from dataclasses import replace

import numpy as np
import pytest

from geoproto.cluster.distance import WGS84
from geoproto.cluster.lambdas import (
    estimate_lambda1,
    estimate_lambda2,
    estimate_lambdas,
    gini_impurity,
    resolve_weights,
)
from geoproto.data.dataset import IngestOptions, ingest_frame
from geoproto.data.schema import NumericalAttribute, Schema
from geoproto.exceptions import DegenerateWeightError


def brute_average_variance(data):
    return np.mean([np.var(data.numerical[:, j], ddof=1) for j in range(data.numerical.shape[1])])


def brute_gini(column):
    values, counts = np.unique(column, return_counts=True)
    total = sum(counts)
    return 1 - sum((c / total) ** 2 for c in counts)


def brute_distance_variance(data):
    lat, lon = data.spatial[:, 0], data.spatial[:, 1]
    clat, clon = lat.mean(), lon.mean()
    h = np.sin((lat - clat) / 2) ** 2 + np.cos(lat) * np.cos(clat) * np.sin((lon - clon) / 2) ** 2
    distances = 2 * WGS84.effective_radius_m * np.arcsin(np.sqrt(h))
    return np.var(distances, ddof=1)


class TestGini:
    def test_plan_frequencies(self):
        assert gini_impurity(np.array([7428, 1455, 1117])) == pytest.approx(0.4146, abs=1e-4)

    def test_constant_attribute(self):
        assert gini_impurity(np.array([10, 0])) == 0.0

    def test_uniform(self):
        assert gini_impurity(np.array([5, 5, 5, 5])) == pytest.approx(0.75)


class TestEstimators:
    @pytest.mark.parametrize("seed", range(20))
    def test_match_brute_force(self, make_dataset, seed):
        data = make_dataset(n=80, seed=seed)
        gini = np.mean([brute_gini(data.categorical[:, j]) for j in range(data.categorical.shape[1])])
        numer = brute_average_variance(data)
        assert estimate_lambda1(data) == pytest.approx(numer / gini, rel=1e-10)
        assert estimate_lambda2(data) == pytest.approx(numer / brute_distance_variance(data), rel=1e-9)

    @pytest.mark.parametrize("c", [0.5, 0.1])
    def test_scale_with_numerical_variance(self, make_dataset, c):
        data = make_dataset(n=80, seed=4)
        scaled = replace(data, numerical=data.numerical * c)
        assert estimate_lambda1(scaled) == pytest.approx(c * c * estimate_lambda1(data), rel=1e-9)
        assert estimate_lambda2(scaled) == pytest.approx(c * c * estimate_lambda2(data), rel=1e-9)

    def test_estimate_carries_ingredients(self, make_dataset):
        data = make_dataset(n=60)
        estimate = estimate_lambdas(data)
        assert estimate.lambda1 == pytest.approx(estimate.numer_avg_variance / estimate.categorical_avg_gini)
        assert estimate.lambda2 == pytest.approx(estimate.numer_avg_variance / estimate.spatial_distance_variance)
        lat, lon = estimate.center.to_degrees()
        assert 25 <= lat <= 49 and -124 <= lon <= -67
        assert estimate.weights().lambda1 == estimate.lambda1

    def test_constant_categoricals(self, small_frame, mixed_schema):
        small_frame["sex"] = "F"
        small_frame["plan"] = "Term"
        data = ingest_frame(small_frame, mixed_schema)
        with pytest.raises(DegenerateWeightError, match="set lambda1 manually"):
            estimate_lambda1(data)

    def test_coincident_locations(self, small_frame, mixed_schema):
        small_frame["latitude"] = "40.0"
        small_frame["longitude"] = "-74.0"
        data = ingest_frame(small_frame, mixed_schema)
        with pytest.raises(DegenerateWeightError, match="lambda2"):
            estimate_lambda2(data)

    def test_absent_kinds_get_zero(self, small_frame):
        schema = Schema(attributes=(NumericalAttribute(name="age"),))
        estimate = estimate_lambdas(ingest_frame(small_frame, schema))
        assert (estimate.lambda1, estimate.lambda2) == (0.0, 0.0)
        assert estimate.center is None

    def test_single_record(self, small_frame, mixed_schema):
        data = ingest_frame(small_frame.head(1), mixed_schema)
        with pytest.raises(DegenerateWeightError):
            estimate_lambda1(data)


class TestResolveWeights:
    def test_estimates_by_default(self, make_dataset):
        data = make_dataset(n=60)
        w = resolve_weights(data)
        assert w.lambda1 == estimate_lambda1(data)
        assert w.lambda2 == estimate_lambda2(data)

    def test_override_wins(self, make_dataset):
        w = resolve_weights(make_dataset(n=60), lambda1=2.5)
        assert w.lambda1 == 2.5
        assert w.lambda2 > 0

    def test_override_rescues_degenerate(self, small_frame, mixed_schema):
        small_frame["latitude"] = "40.0"
        small_frame["longitude"] = "-74.0"
        data = ingest_frame(small_frame, mixed_schema, IngestOptions(id_column="id"))
        with pytest.raises(DegenerateWeightError):
            resolve_weights(data)
        assert resolve_weights(data, lambda2=1e-6).lambda2 == 1e-6

    def test_lambda2_is_per_meter(self, make_dataset):
        data = make_dataset(n=100)
        assert 0 < resolve_weights(data).lambda2 < 1e-9
