import numpy as np
import pytest

from ldaselect.errors import ValidationError
from ldaselect.kmeans import kmeans_pp_indices, train_kmeans

from reference import ref_best_two_partition


def test_each_vector_its_own_centroid():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    km = train_kmeans(X, 6, seed=1)
    assert km.inertia_history[-1] == pytest.approx(0.0, abs=1e-12)
    # every input row appears among the centroids
    for row in X:
        assert np.min(np.sum((km.centroids - row) ** 2, axis=1)) < 1e-18


def test_single_cluster_closed_form():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 5))
    km = train_kmeans(X, 1, seed=0)
    assert np.allclose(km.centroids[0], X.mean(axis=0), atol=1e-12)
    assert np.all(km.assignments == 0)


def test_two_blobs_match_brute_force():
    """Optimal 2-partition on well-separated blobs, against exhaustive search."""
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 2)) * 0.3 + np.array([0.0, 0.0])
    b = rng.standard_normal((6, 2)) * 0.3 + np.array([8.0, 8.0])
    X = np.vstack([a, b])
    km = train_kmeans(X, 2, seed=3)
    groups = frozenset(
        frozenset(np.flatnonzero(km.assignments == j).tolist()) for j in (0, 1)
    )
    best_split, best_cost = ref_best_two_partition(X.tolist())
    assert groups == best_split
    assert km.inertia_history[-1] == pytest.approx(best_cost, rel=1e-9)
    for j in (0, 1):
        member = X[km.assignments == j]
        assert np.allclose(km.centroids[j], member.mean(axis=0), atol=1e-6)


def test_inertia_monotone_random():
    rng = np.random.default_rng(5)
    for trial in range(10):
        X = rng.standard_normal((50, 4))
        km = train_kmeans(X, 5, seed=trial)
        h = km.inertia_history
        assert all(h[i + 1] <= h[i] + 1e-9 for i in range(len(h) - 1))
        assert np.bincount(km.assignments, minlength=5).min() >= 1


def test_determinism_and_order_independence():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((30, 3))
    km1 = train_kmeans(X, 4, seed=9)
    km2 = train_kmeans(X, 4, seed=9)
    assert np.array_equal(km1.centroids, km2.centroids)
    assert np.array_equal(km1.assignments, km2.assignments)
    perm = rng.permutation(30)
    km3 = train_kmeans(X[perm], 4, seed=9)
    # same centroids in the same order; assignments permuted along with rows
    assert np.array_equal(km3.centroids, km1.centroids)
    assert np.array_equal(km3.assignments, km1.assignments[perm])


def test_centroid_mean_consistency():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((60, 2))
    km = train_kmeans(X, 6, seed=0, max_iterations=200)
    for j in range(6):
        member = X[km.assignments == j]
        assert np.allclose(km.centroids[j], member.mean(axis=0), atol=1e-9)


def test_normalized_centroids_variant():
    rng = np.random.default_rng(17)
    X = rng.random((40, 5)) + 0.1
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    km = train_kmeans(X, 4, seed=2, normalize_centroids=True)
    assert np.allclose(np.linalg.norm(km.centroids, axis=1), 1.0, atol=1e-12)
    h = km.inertia_history
    assert all(h[i + 1] <= h[i] + 1e-9 for i in range(len(h) - 1))


def test_validation_errors():
    X = np.ones((3, 2)) * np.arange(3)[:, None]
    with pytest.raises(ValidationError):
        train_kmeans(X, 4, seed=0)
    with pytest.raises(ValidationError):
        train_kmeans(X, 0, seed=0)
    with pytest.raises(ValidationError):
        train_kmeans(np.array([[np.nan, 1.0]]), 1, seed=0)
    with pytest.raises(ValidationError):
        train_kmeans(np.ones(5), 1, seed=0)


def test_seeding_indices_cover_spread_points():
    """k-means++ must pick one seed from each far-apart blob."""
    rng = np.random.default_rng(3)
    blobs = [np.array([0.0, 0.0]), np.array([50.0, 0.0]), np.array([0.0, 50.0])]
    X = np.vstack([c + rng.standard_normal((8, 2)) * 0.1 for c in blobs])
    for seed in range(5):
        idx = kmeans_pp_indices(X, 3, np.random.default_rng(seed))
        owners = {int(i) // 8 for i in idx}
        assert owners == {0, 1, 2}
