"""Weighted K-Means primitives shared by the dictionary builders."""

import numpy as np
import pytest

from ensparse.errors import ContractViolation
from ensparse.kmeans import (assign_to_centers, squared_distances,
                             weighted_cost, weighted_kmeans_pp, weighted_lloyd)

from oracles import weighted_cost_reference


def test_squared_distances_match_manual():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 7))
    c = rng.normal(size=(3, 4))
    d2 = squared_distances(x, c)
    assert d2.shape == (4, 7)
    for i in range(7):
        for j in range(4):
            diff = x[:, i] - c[:, j]
            assert d2[j, i] == pytest.approx(float(diff @ diff), abs=1e-12)
    assert np.all(d2 >= 0.0)


def test_assignment_breaks_ties_toward_lowest_index():
    x = np.array([[0.0], [0.0]])
    centers = np.array([[1.0, -1.0], [0.0, 0.0]])  # equidistant from x
    labels = assign_to_centers(x, centers)
    assert labels[0] == 0


def test_weighted_cost_matches_reference():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 9))
    w = rng.uniform(0.1, 1.0, size=9)
    w /= w.sum()
    centers = rng.normal(size=(2, 3))
    labels = assign_to_centers(x, centers)
    assert weighted_cost(x, w, centers, labels) == pytest.approx(
        weighted_cost_reference(x, w, centers), rel=1e-12)


def test_kmeans_pp_seeds_are_distinct_and_deterministic():
    rng_data = np.random.default_rng(2)
    x = rng_data.normal(size=(2, 20))
    w = np.full(20, 1.0 / 20)
    idx1 = weighted_kmeans_pp(x, w, 5, np.random.default_rng(77))
    idx2 = weighted_kmeans_pp(x, w, 5, np.random.default_rng(77))
    np.testing.assert_array_equal(idx1, idx2)
    assert len(set(np.asarray(idx1).tolist())) == 5


def test_kmeans_pp_ignores_zero_weight_samples():
    x = np.array([[0.0, 1.0, 2.0, 50.0], [0.0, 0.0, 0.0, 0.0]])
    w = np.array([0.4, 0.3, 0.3, 0.0])
    for seed in range(20):
        idx = weighted_kmeans_pp(x, w, 2, np.random.default_rng(seed))
        assert 3 not in set(np.asarray(idx).tolist())


def test_lloyd_cost_non_increasing_stepwise():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 30))
    w = rng.uniform(0.2, 1.0, size=30)
    w /= w.sum()
    seed_idx = weighted_kmeans_pp(x, w, 4, np.random.default_rng(5))
    centers = x[:, seed_idx]
    labels = assign_to_centers(x, centers)
    prev = weighted_cost(x, w, centers, labels)
    for _ in range(10):
        centers, labels, cost = weighted_lloyd(x, w, centers, max_iter=1)
        assert cost <= prev + 1e-12
        prev = cost


def test_lloyd_keeps_center_when_cluster_empties():
    x = np.array([[0.0, 0.1, 5.0], [0.0, 0.0, 0.0]])
    w = np.array([0.5, 0.5, 0.0])  # the far point carries no weight
    start = np.array([[0.05, 5.0], [0.0, 0.0]])
    centers, labels, cost = weighted_lloyd(x, w, start, max_iter=3)
    # cluster 1 attracts only the zero-weight sample; its center must survive
    np.testing.assert_array_equal(centers[:, 1], start[:, 1])
    assert cost == pytest.approx(weighted_cost(x, w, centers, labels))


def test_kmeans_pp_rejects_bad_k():
    x = np.zeros((2, 3))
    w = np.full(3, 1 / 3)
    with pytest.raises(ContractViolation):
        weighted_kmeans_pp(x, w, 4, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        weighted_kmeans_pp(x, w, 0, np.random.default_rng(0))
