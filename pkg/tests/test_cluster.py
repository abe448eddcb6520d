import itertools

import numpy as np
import pytest

from epiens.cluster import (
    ClusterAssignment,
    ClusterError,
    cluster_regions,
    dtw,
    geo_cluster,
    kmeans,
    kmeans_objective,
    kshape,
    kshape_objective,
    sbd,
    shape_extract,
    tskmeans,
    tskmeans_objective,
    vanilla_cluster,
    write_assignment_csv,
)


def two_cluster_partitions(items):
    """Every split of items into two non-empty unordered groups."""
    items = list(items)
    for r in range(1, len(items)):
        for combo in itertools.combinations(items[1:], r):
            group = set(combo)
            yield group, set(items) - group


class TestVanillaAndGeo:
    def test_vanilla_is_singletons(self):
        a = vanilla_cluster(["x", "y", "z"])
        assert a.k == 3
        assert sorted(map(len, (a.members(i) for i in range(3)))) == [1, 1, 1]

    def test_counties_grouped_by_state(self):
        parents = {"c1": "VA", "c2": "VA", "c3": "MD", "c4": "MD"}
        a = geo_cluster(list(parents), parents)
        assert a.k == 2
        assert {frozenset(a.members(i)) for i in range(2)} == {
            frozenset({"c1", "c2"}), frozenset({"c3", "c4"})}

    def test_single_parent_single_cluster(self):
        a = geo_cluster(["a", "b"], {"a": "X", "b": "X"})
        assert a.k == 1

    def test_many_regions_bounded_by_parent_count(self):
        parents = {f"c{i}": f"S{i % 51}" for i in range(2952)}
        a = geo_cluster(list(parents), parents)
        assert a.k <= 51

    def test_order_independence(self):
        parents = {"a": "X", "b": "Y", "c": "X"}
        p1 = geo_cluster(["a", "b", "c"], parents).partition()
        p2 = geo_cluster(["c", "a", "b"], parents).partition()
        assert p1 == p2

    def test_missing_parent_rejected(self):
        with pytest.raises(ClusterError):
            geo_cluster(["a"], {})


class TestKmeans:
    def test_k_equals_n_gives_zero_objective(self):
        rng = np.random.default_rng(0)
        data = {f"r{i}": rng.normal(size=5) for i in range(4)}
        a = kmeans(data, k=4, seed=1)
        assert a.k == 4
        assert kmeans_objective(data, a) == pytest.approx(0.0, abs=1e-12)

    def test_recovers_separated_bundles(self):
        rng = np.random.default_rng(1)
        data = {}
        for i in range(4):
            data[f"a{i}"] = np.zeros(6) + rng.normal(0, 0.05, 6)
            data[f"b{i}"] = np.ones(6) * 5 + rng.normal(0, 0.05, 6)
        a = kmeans(data, k=2, seed=2)
        assert a.partition() == frozenset([
            frozenset({"a0", "a1", "a2", "a3"}), frozenset({"b0", "b1", "b2", "b3"})])

    def test_k_above_n_rejected(self):
        with pytest.raises(ClusterError):
            kmeans({"a": [1.0, 2.0]}, k=2)

    def test_ragged_series_rejected(self):
        with pytest.raises(ClusterError):
            kmeans({"a": [1.0, 2.0], "b": [1.0]}, k=1)

    def test_objective_non_increasing_across_iterations(self):
        # replay Lloyd's loop manually and track the objective
        rng = np.random.default_rng(3)
        X = np.vstack([rng.normal(0, 1, (6, 4)), rng.normal(4, 1, (6, 4))])
        regions = [f"r{i}" for i in range(12)]
        centroids = X[[0, 1]].copy()
        prev = np.inf
        for _ in range(10):
            d2 = ((X[:, None, :] - centroids[None]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            obj = d2[np.arange(len(X)), labels].sum()
            assert obj <= prev + 1e-12
            prev = obj
            for c in range(2):
                if np.any(labels == c):
                    centroids[c] = X[labels == c].mean(axis=0)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        data = {f"r{i}": rng.normal(size=6) for i in range(9)}
        a1 = kmeans(data, k=3, seed=42)
        a2 = kmeans(data, k=3, seed=42)
        assert a1.labels == a2.labels


class TestSbd:
    def test_self_distance_zero(self):
        x = np.array([1.0, 2.0, 3.0])
        assert sbd(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_perfect_anticorrelation_is_two(self):
        # exactly 2 requires the zero-shift overlap to be the only one,
        # i.e. length-1 series; longer series stay strictly below 2
        assert sbd([3.0], [-3.0]) == pytest.approx(2.0)
        bump = np.exp(-0.5 * (np.arange(9) - 4.0) ** 2)
        assert 1.0 < sbd(bump, -bump) < 2.0

    def test_pulse_invariant_to_shift(self):
        pulse = np.zeros(8)
        pulse[2] = 1.0
        shifted = np.roll(pulse, 2)
        assert sbd(pulse, shifted) == pytest.approx(0.0, abs=1e-12)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            x, y = rng.normal(size=7), rng.normal(size=7)
            d1, d2 = sbd(x, y), sbd(y, x)
            assert d1 == pytest.approx(d2, abs=1e-12)
            assert 0.0 <= d1 <= 2.0

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=7), rng.normal(size=7)
        assert sbd(3.0 * x, y) == pytest.approx(sbd(x, y), abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ClusterError):
            sbd(np.zeros(3), np.ones(3))


class TestKshape:
    def test_k1_single_cluster_unit_norm_centroid(self):
        rng = np.random.default_rng(7)
        data = {f"r{i}": rng.normal(size=8) for i in range(5)}
        a = kshape(data, k=1, seed=0)
        assert set(a.labels.values()) == {0}
        assert np.linalg.norm(a.centroids[0]) == pytest.approx(1.0)

    def test_separates_shapes_despite_shifts(self):
        pulse = np.zeros(12)
        pulse[3] = 1.0
        ramp = np.linspace(0, 1, 12)
        data = {}
        for i in range(3):
            data[f"p{i}"] = np.roll(pulse, i) * (i + 1.0)
            data[f"m{i}"] = np.roll(ramp, i) * (2.0 + i)
        a = kshape(data, k=2, seed=1)
        groups = {frozenset(a.members(c)) for c in range(2)}
        assert groups == {frozenset({"p0", "p1", "p2"}), frozenset({"m0", "m1", "m2"})}

    def test_amplitude_scaling_invariance(self):
        rng = np.random.default_rng(8)
        base = {f"r{i}": rng.normal(size=10) for i in range(6)}
        scaled = {r: 7.5 * s for r, s in base.items()}
        a1 = kshape(base, k=2, seed=3)
        a2 = kshape(scaled, k=2, seed=3)
        assert a1.partition() == a2.partition()

    def test_handles_ragged_lengths_by_padding(self):
        data = {"a": np.array([0, 1, 0, 0.0]), "b": np.array([0, 0, 1, 0, 0.0]),
                "c": np.array([1, 2, 3, 4, 5.0])}
        a = kshape(data, k=2, seed=0)
        assert set(a.labels) == {"a", "b", "c"}


class TestTskmeans:
    def test_identical_series_zero_distance(self):
        data = {f"r{i}": np.array([1.0, 2.0, 3.0]) for i in range(3)}
        a = tskmeans(data, k=1, seed=0)
        assert tskmeans_objective(data, a) == pytest.approx(0.0, abs=1e-12)

    def test_recovers_warped_shapes(self):
        rise = np.array([0, 0, 1, 3, 6, 9, 9.0])
        fall = np.array([9, 9, 6, 3, 1, 0, 0.0])
        data = {
            "r0": rise, "r1": np.repeat(rise, 2)[::2] * 1.1,
            "r2": np.concatenate([[0.0], rise]),
            "f0": fall, "f1": np.concatenate([fall, [0.0]]),
            "f2": fall * 0.9,
        }
        a = tskmeans(data, k=2, seed=1)
        groups = {frozenset(a.members(c)) for c in range(2)}
        assert groups == {frozenset({"r0", "r1", "r2"}), frozenset({"f0", "f1", "f2"})}

    def test_dtw_properties(self):
        assert dtw([1, 2, 3], [1, 2, 3]) == 0.0
        # warping absorbs tempo changes: a doubled series stays at distance 0
        assert dtw([1, 2, 3], [1, 1, 2, 2, 3, 3]) == 0.0
        assert dtw([0, 0], [1, 1]) > 0.0


class TestExhaustiveOracle:
    """Planted 2-cluster structures on <= 8 series must reach the
    exhaustive-partition optimum in at least 90% of seeds."""

    def planted(self, rng):
        data = {}
        for i in range(4):
            data[f"a{i}"] = np.array([0, 1, 2, 4, 6, 7.0]) + rng.normal(0, 0.15, 6)
            data[f"b{i}"] = np.array([7, 6, 4, 2, 1, 0.0]) + rng.normal(0, 0.15, 6)
        return data

    def test_kmeans_matches_oracle_objective(self):
        hits = 0
        for seed in range(20):
            data = self.planted(np.random.default_rng(100 + seed))
            a = kmeans(data, k=2, seed=seed)
            achieved = kmeans_objective(data, a)
            best = min(
                kmeans_objective(data, ClusterAssignment(
                    "kmeans", {r: (0 if r in g1 else 1) for r in data}, 2))
                for g1, _ in two_cluster_partitions(data))
            if achieved <= best + 1e-9:
                hits += 1
        assert hits >= 18

    def test_kshape_matches_oracle_objective(self):
        hits = 0
        for seed in range(20):
            data = self.planted(np.random.default_rng(200 + seed))
            a = kshape(data, k=2, seed=seed)
            achieved = kshape_objective(data, a.labels, 2)
            best = min(
                kshape_objective(data, {r: (0 if r in g1 else 1) for r in data}, 2)
                for g1, _ in two_cluster_partitions(data))
            if achieved <= best + 1e-9:
                hits += 1
        assert hits >= 18

    def test_tskmeans_recovers_planted_partition(self):
        target = frozenset([frozenset({f"a{i}" for i in range(4)}),
                            frozenset({f"b{i}" for i in range(4)})])
        hits = 0
        for seed in range(20):
            data = self.planted(np.random.default_rng(300 + seed))
            a = tskmeans(data, k=2, seed=seed)
            if a.partition() == target:
                hits += 1
        assert hits >= 18

    def test_tskmeans_objective_non_increasing(self):
        # deterministic given the seed, so growing max_iter replays the
        # same trajectory; the safeguarded centroid update must keep the
        # objective non-increasing along it
        rng = np.random.default_rng(9)
        data = {f"r{i}": rng.normal(size=6).cumsum() for i in range(6)}
        objectives = [tskmeans_objective(data, tskmeans(data, k=2, max_iter=i, seed=0))
                      for i in range(1, 6)]
        for earlier, later in zip(objectives, objectives[1:]):
            assert later <= earlier + 1e-9


class TestDispatchAndExport:
    def test_dispatch_canonical_methods(self):
        rng = np.random.default_rng(10)
        curves = {f"r{i}": rng.random(6) for i in range(5)}
        parents = {f"r{i}": f"S{i % 2}" for i in range(5)}
        for method in ("vanilla", "geo", "kmeans", "tskmeans", "kshape"):
            a = cluster_regions(method, curves, parents=parents, k=50, seed=0)
            assert set(a.labels) == set(curves)
            assert set(a.labels.values()) == set(range(a.k))

    def test_unknown_method(self):
        with pytest.raises(ClusterError):
            cluster_regions("agglomerative", {"a": [1.0]}, k=1)

    def test_k_is_capped_at_n(self):
        rng = np.random.default_rng(11)
        curves = {f"r{i}": rng.random(5) for i in range(3)}
        a = cluster_regions("kmeans", curves, k=50, seed=0)
        assert a.k == 3

    def test_export_schema(self, tmp_path):
        a = vanilla_cluster(["x", "y"])
        path = tmp_path / "clusters.csv"
        write_assignment_csv([a], path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "region,method,cluster_id"
        assert len(lines) == 3


class TestShapeExtract:
    def test_sign_matches_members(self):
        rng = np.random.default_rng(12)
        base = np.sin(np.linspace(0, 2 * np.pi, 10))
        members = np.array([base + rng.normal(0, 0.05, 10) for _ in range(4)])
        centroid = shape_extract(members, members[0])
        assert centroid @ members.sum(axis=0) > 0
