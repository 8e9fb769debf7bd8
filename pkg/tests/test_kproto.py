"""Tests for the k-prototypes engine."""

import itertools
import math

import numpy as np
import pytest

from geoproto.cluster.distance import mixed_distance
from geoproto.cluster.kproto import (
    KProtoConfig,
    SpatialRule,
    assign,
    describe_prototypes,
    fit,
    initialize,
    recompute_cost,
    update_prototypes,
)
from geoproto.cluster.lambdas import resolve_weights
from geoproto.data.dataset import IngestOptions, ingest_frame
from geoproto.data.schema import Schema
from geoproto.exceptions import ConfigurationError, EmptyClusterError
from geoproto.models import Weights
from geoproto.mortality.synth import SynthSpec, generate, pipeline_config

W = Weights(lambda1=0.5, lambda2=1e-6)


def random_mixed(build_dataset, rng, n, levels=3):
    """Random records within a few hundred kilometers of each other."""
    coordinates = np.column_stack([rng.uniform(38, 42, n), rng.uniform(-80, -74, n)])
    return build_dataset(
        rng.random((n, 2)), rng.integers(0, levels, (n, 2)), np.round(coordinates, 2)
    )


def partition_cost(data, members, w):
    """Cost of one cluster with mean, mode and member-medoid prototype."""
    subset = data.take(np.asarray(members))
    labels = np.zeros(subset.n, dtype=np.int64)
    prototype = update_prototypes(subset, labels, [subset.record(0)], SpatialRule.MEDOID)[0]
    return sum(mixed_distance(subset.record(i), prototype, w) for i in range(subset.n))


def squared_error(values, center):
    return float(((values - np.asarray(center)) ** 2).sum())


class TestInitialize:
    def test_k_equals_n_uses_every_record(self, make_dataset):
        data = make_dataset(n=6)
        prototypes = initialize(data, 6, seed=4)
        assert sorted(p.numerical for p in prototypes) == sorted(data.record(i).numerical for i in range(6))

    def test_deterministic(self, make_dataset):
        data = make_dataset(n=40)
        assert initialize(data, 3, seed=1) == initialize(data, 3, seed=1)

    def test_k_above_n(self, make_dataset):
        with pytest.raises(ConfigurationError):
            initialize(make_dataset(n=3), 4, seed=0)


class TestAssign:
    def test_record_on_prototype(self, make_dataset):
        data = make_dataset(n=20)
        prototypes = [data.record(3), data.record(8), data.record(15)]
        result = assign(data, prototypes, W)
        assert result.labels[8] == 1
        assert result.distances[8] == 0.0

    def test_ties_go_to_lowest_index(self, make_dataset):
        data = make_dataset(n=20)
        result = assign(data, [data.record(5), data.record(5)], W)
        assert not result.labels.any()

    def test_single_prototype(self, make_dataset):
        data = make_dataset(n=20)
        z = data.record(0)
        result = assign(data, [z], W)
        assert not result.labels.any()
        assert math.fsum(result.distances) == pytest.approx(
            sum(mixed_distance(data.record(i), z, W) for i in range(data.n))
        )

    def test_nearest_prototype_everywhere(self, make_dataset):
        data = make_dataset(n=60, seed=8)
        prototypes = [data.record(i) for i in (1, 20, 40, 59)]
        result = assign(data, prototypes, W)
        for i in range(data.n):
            distances = [mixed_distance(data.record(i), z, W) for z in prototypes]
            assert distances[result.labels[i]] == pytest.approx(min(distances), rel=1e-12, abs=1e-15)

    def test_requires_prototypes(self, make_dataset):
        with pytest.raises(ConfigurationError):
            assign(make_dataset(n=5), [], W)


class TestUpdate:
    def test_singleton_cluster(self, make_dataset):
        data = make_dataset(n=5)
        labels = np.array([0, 1, 1, 1, 1])
        prototypes = update_prototypes(data, labels, [data.record(1), data.record(2)])
        assert prototypes[0] == data.record(0)

    def test_mode(self, build_dataset):
        data = build_dataset([[0.1], [0.2], [0.3]], [[0], [0], [1]])
        prototypes = update_prototypes(data, np.zeros(3, dtype=int), [data.record(2)])
        assert prototypes[0].categorical == (0,)
        assert prototypes[0].numerical == pytest.approx((0.2,))

    def test_mode_ties_take_lowest_level(self, build_dataset):
        data = build_dataset([[0.1], [0.2]], [[2], [1]])
        prototypes = update_prototypes(data, np.zeros(2, dtype=int), [data.record(0)])
        assert prototypes[0].categorical == (1,)

    def test_medoid_of_collinear_points(self, build_dataset):
        data = build_dataset([[0.0]] * 3, coordinates=[[0, 0], [0, 1], [0, 2]])
        prototypes = update_prototypes(data, np.zeros(3, dtype=int), [data.record(0)], SpatialRule.MEDOID)
        assert prototypes[0].location == data.record(1).location

    def test_closest_to_previous_rule_moves_to_nearest_other_coordinate(self, build_dataset):
        data = build_dataset([[0.0]] * 3, coordinates=[[0, 0], [0, 3], [0, 1]])
        prototypes = update_prototypes(data, np.zeros(3, dtype=int), [data.record(0)], SpatialRule.PAPER)
        assert prototypes[0].location == data.record(2).location

    def test_closest_to_previous_rule_keeps_previous_when_alone(self, build_dataset):
        data = build_dataset([[0.0], [0.5]], coordinates=[[10, 10], [10, 10]])
        prototypes = update_prototypes(data, np.zeros(2, dtype=int), [data.record(0)], SpatialRule.PAPER)
        assert prototypes[0].location == data.record(0).location

    def test_empty_cluster(self, make_dataset):
        data = make_dataset(n=5)
        with pytest.raises(EmptyClusterError):
            update_prototypes(data, np.zeros(5, dtype=int), [data.record(0), data.record(1)])

    def test_mean_and_mode_are_optimal(self, build_dataset):
        rng = np.random.default_rng(12)
        for _ in range(300):
            size = int(rng.integers(1, 11))
            data = build_dataset(rng.random((size, 2)), rng.integers(0, 3, (size, 2)))
            prototype = update_prototypes(data, np.zeros(size, dtype=int), [data.record(0)])[0]
            at_mean = squared_error(data.numerical, prototype.numerical)
            for i in range(size):
                assert at_mean <= squared_error(data.numerical, data.numerical[i]) + 1e-9
            for j in range(2):
                mismatches = [(data.categorical[:, j] != level).sum() for level in range(3)]
                assert mismatches[prototype.categorical[j]] == min(mismatches)


class TestFit:
    def test_two_separated_groups(self, build_dataset):
        near = [[0.02], [0.05], [0.08], [0.1]]
        far = [[0.9], [0.93], [0.95], [1.0]]
        data = build_dataset(
            near + far,
            [[0], [0], [1], [0], [2], [2], [2], [1]],
            [[40.7, -74.0]] * 4 + [[34.05, -118.24]] * 4,
        )
        model = fit(data, KProtoConfig(k=2, weights=Weights(lambda1=0.1, lambda2=1e-7), seed=3))
        labels = model.assignment
        assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1
        assert labels[0] != labels[4]
        within = sum(float(((np.array(g) - np.mean(g)) ** 2).sum()) for g in (near, far))
        assert model.cost_numerical == pytest.approx(within)
        assert model.cost_spatial == 0.0
        assert model.converged

    def test_single_cluster(self, make_dataset):
        data = make_dataset(n=50)
        model = fit(data, KProtoConfig(k=1, weights=W, restarts=3))
        np.testing.assert_allclose(model.prototypes[0].numerical, data.numerical.mean(axis=0), rtol=1e-12)
        assert model.cost_total == pytest.approx(recompute_cost(data, model).total, rel=1e-9)

    def test_costs_are_consistent(self, make_dataset):
        data = make_dataset(n=120, seed=5)
        model = fit(data, KProtoConfig(k=3, weights=W, restarts=4, seed=2))
        recomputed = recompute_cost(data, model)
        assert model.cost_total == pytest.approx(recomputed.total, rel=1e-9)
        assert model.cost_numerical == pytest.approx(recomputed.numerical, rel=1e-9)
        assert model.cost_categorical == pytest.approx(recomputed.categorical, rel=1e-9)
        assert model.cost_spatial == pytest.approx(recomputed.spatial, rel=1e-9)
        assert model.cost_total == pytest.approx(
            model.cost_numerical + model.cost_categorical + model.cost_spatial, rel=1e-9
        )
        assert set(np.unique(model.assignment)) <= {0, 1, 2}
        assert model.cost_history[-1] == model.cost_total

    def test_deterministic(self, make_dataset):
        data = make_dataset(n=100, seed=6)
        cfg = KProtoConfig(k=3, weights=W, restarts=5, seed=9)
        first, second = fit(data, cfg), fit(data, cfg)
        threaded = fit(data, cfg.model_copy(update={"n_jobs": 3}))
        for other in (second, threaded):
            assert np.array_equal(first.assignment, other.assignment)
            assert first.prototypes == other.prototypes
            assert first.cost_total == other.cost_total
            assert first.restart_index == other.restart_index

    def test_more_restarts_never_hurt(self, make_dataset):
        data = make_dataset(n=100, seed=7)
        few = fit(data, KProtoConfig(k=4, weights=W, restarts=2, seed=1))
        many = fit(data, KProtoConfig(k=4, weights=W, restarts=6, seed=1))
        assert many.cost_total <= few.cost_total

    def test_restart_seeds(self, make_dataset):
        model = fit(make_dataset(n=60), KProtoConfig(k=2, weights=W, restarts=4, seed=10))
        assert model.seed == 10 + model.restart_index

    def test_identical_records_exhaust_repair(self, build_dataset):
        data = build_dataset([[0.5]] * 5, [[1]] * 5, [[40.0, -74.0]] * 5)
        model = fit(data, KProtoConfig(k=2, weights=W, restarts=2))
        assert model.repair_exhausted
        assert not model.converged
        assert model.cost_total == 0.0

    def test_empty_clusters_are_reseeded(self, build_dataset):
        # Records 0 and 1 coincide; drawing both as prototypes empties a cluster
        data = build_dataset([[0.0], [0.0], [1.0]], [[0], [0], [1]], [[40, -74], [40, -74], [41, -75]])
        model = fit(data, KProtoConfig(k=2, weights=W, restarts=5))
        assert sorted(model.cluster_sizes().tolist()) == [1, 2]
        assert model.cost_total == pytest.approx(0.0, abs=1e-12)

    def test_k_above_n(self, make_dataset):
        with pytest.raises(ConfigurationError):
            fit(make_dataset(n=3), KProtoConfig(k=4, weights=W))

    def test_reassignment_changes_cost_by_distance_difference(self, make_dataset):
        data = make_dataset(n=80, seed=4)
        model = fit(data, KProtoConfig(k=3, weights=W, restarts=2))
        before = recompute_cost(data, model).total
        labels = model.assignment.copy()
        old = labels[10]
        new = (old + 1) % 3
        labels[10] = new
        after = recompute_cost(data, model.model_copy(update={"assignment": labels})).total
        x = data.record(10)
        expected = mixed_distance(x, model.prototypes[new], W) - mixed_distance(x, model.prototypes[old], W)
        assert after - before == pytest.approx(expected, abs=1e-9)

    def test_zero_weights_drop_components(self, make_dataset):
        data = make_dataset(n=40)
        model = fit(data, KProtoConfig(k=2, restarts=2))
        assert model.cost_categorical == 0.0
        assert model.cost_spatial == 0.0

    def test_medoid_cost_never_increases(self, build_dataset):
        for seed in range(10):
            data = random_mixed(build_dataset, np.random.default_rng(seed), 300)
            model = fit(data, KProtoConfig(k=4, weights=W, restarts=1, spatial_rule=SpatialRule.MEDOID, seed=seed))
            history = np.array(model.cost_history)
            assert np.all(np.diff(history) <= 1e-9 * history[:-1])

    def test_closest_to_previous_rule_terminates(self, build_dataset):
        data = random_mixed(build_dataset, np.random.default_rng(21), 300)
        model = fit(data, KProtoConfig(k=4, weights=W, restarts=3, max_iterations=50))
        assert model.iterations <= 50

    def test_describe_prototypes(self, small_data):
        model = fit(small_data, KProtoConfig(k=2, weights=Weights(lambda1=0.2, lambda2=1e-7), restarts=3))
        described = describe_prototypes(model, small_data)
        assert [d["cluster"] for d in described] == [0, 1]
        for entry in described:
            assert 30 <= entry["age"]["raw"] <= 60
            assert entry["sex"] in ("F", "M")
            assert entry["plan"] in ("Term", "Whole")
            assert round(entry["latitude"], 6) in (40.0, 34.0)
            assert round(entry["longitude"], 6) in (-74.0, -118.0)


@pytest.mark.slow
class TestAcceptance:
    def test_medoid_monotone_on_large_suite(self, build_dataset):
        for seed in range(100):
            data = random_mixed(build_dataset, np.random.default_rng(1000 + seed), 1000)
            model = fit(data, KProtoConfig(k=5, weights=W, restarts=1, spatial_rule=SpatialRule.MEDOID, seed=seed))
            history = np.array(model.cost_history)
            assert np.all(np.diff(history) <= 1e-9 * history[:-1])

    def test_small_instances_reach_global_optimum(self, build_dataset):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(5000 + seed)
            n = int(rng.integers(6, 11))
            data = random_mixed(build_dataset, rng, n)
            best = math.inf
            for mask in itertools.product([0, 1], repeat=n - 1):
                labels = np.array((0, *mask))
                if labels.all() or not labels.any():
                    continue
                cost = partition_cost(data, np.flatnonzero(labels == 0), W) + partition_cost(
                    data, np.flatnonzero(labels == 1), W
                )
                best = min(best, cost)
            model = fit(data, KProtoConfig(k=2, weights=W, restarts=20, spatial_rule=SpatialRule.MEDOID, seed=seed))
            hits += model.cost_total <= best + 1e-9
        assert hits >= 95

    def test_million_records(self):
        spec = SynthSpec(n=1_000_000, clusters=3, seed=0)
        portfolio, _ = generate(spec)
        config = pipeline_config(spec)
        data = ingest_frame(
            portfolio, Schema.model_validate({"attributes": config["attributes"]}), IngestOptions(id_column="policy_id")
        )
        model = fit(data, KProtoConfig(k=3, weights=resolve_weights(data), restarts=20, n_jobs=8))
        assert model.cluster_sizes().sum() == 1_000_000
        assert model.cluster_sizes().min() > 0
