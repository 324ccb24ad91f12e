"""Seeded k-means used for diverse question selection."""
import itertools

import numpy as np
import pytest

from src.questions.clustering import kmeans


def sse_of(points, assignments):
    points = np.asarray(points, dtype=float)
    labels = np.asarray(assignments)
    total = 0.0
    for cluster in set(assignments):
        members = points[labels == cluster]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def best_two_partition_sse(points):
    """Exhaustive search over every split into two non-empty groups."""
    n = len(points)
    best = float("inf")
    for mask in range(1, 2 ** (n - 1)):
        labels = [(mask >> i) & 1 for i in range(n)]
        best = min(best, sse_of(points, labels))
    return best


def two_blobs(rng, n):
    left = rng.normal(loc=(0.0, 0.0), scale=0.3, size=(n // 2, 2))
    right = rng.normal(loc=(8.0, 8.0), scale=0.3, size=(n - n // 2, 2))
    return np.vstack([left, right])


def overlapping_blobs(rng, n):
    left = rng.normal(loc=(0.0, 0.0), scale=1.0, size=(n // 2, 2))
    right = rng.normal(loc=(1.5, 0.5), scale=1.0, size=(n - n // 2, 2))
    return np.vstack([left, right])


def test_single_cluster_is_the_mean():
    points = [[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]]
    result = kmeans(points, 1, seed=0)
    assert result.assignments == [0, 0, 0]
    np.testing.assert_allclose(result.centroids[0], [1.0, 1.0])
    # nearest point to (1, 1): (0, 0) and (2, 0) tie at distance 2, (1, 3) at 4
    assert result.selected_indices == [0]


@pytest.mark.parametrize("seed", range(10))
def test_square_corners_split_on_x(seed):
    points = [[0, 0], [0, 1], [10, 0], [10, 1]]
    result = kmeans(points, 2, seed=seed)
    a = result.assignments
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
    assert result.sse == pytest.approx(1.0)


def test_deterministic_for_fixed_seed():
    points = np.random.default_rng(7).normal(size=(30, 5))
    first = kmeans(points, 4, seed=11)
    second = kmeans(points, 4, seed=11)
    assert first.assignments == second.assignments
    assert first.selected_indices == second.selected_indices
    for a, b in zip(first.centroids, second.centroids):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("k", [0, -1, 4])
def test_invalid_k(k):
    with pytest.raises(ValueError):
        kmeans([[0.0], [1.0], [2.0]], k)


def test_empty_points_rejected():
    with pytest.raises(ValueError):
        kmeans([], 1)


def test_duplicates_leave_no_empty_cluster():
    points = [[0.0, 0.0]] * 5 + [[1.0, 1.0]]
    result = kmeans(points, 3, seed=0)
    assert sorted(set(result.assignments)) == [0, 1, 2]
    assert len(set(result.selected_indices)) == 3
    for cluster, index in enumerate(result.selected_indices):
        assert result.assignments[index] == cluster


def test_selected_point_is_nearest_to_its_centroid():
    points = np.random.default_rng(3).normal(size=(25, 3))
    result = kmeans(points, 5, seed=2)
    for cluster, index in enumerate(result.selected_indices):
        members = [i for i, label in enumerate(result.assignments) if label == cluster]
        distances = {i: float(np.sum((points[i] - result.centroids[cluster]) ** 2)) for i in members}
        assert distances[index] == min(distances.values())
        assert index == min(i for i, d in distances.items() if d == distances[index])


def test_two_blob_fixtures_reach_exhaustive_optimum():
    rng = np.random.default_rng(2024)
    fixtures = [two_blobs(rng, n) for n in itertools.islice(itertools.cycle(range(4, 11)), 40)]
    hits = 0
    for seed, points in enumerate(fixtures):
        result = kmeans(points, 2, seed=seed)
        if sse_of(points, result.assignments) <= best_two_partition_sse(points) + 1e-9:
            hits += 1
    assert hits >= 38


def test_overlapping_fixtures_reach_exhaustive_optimum():
    rng = np.random.default_rng(7)
    fixtures = [overlapping_blobs(rng, n) for n in itertools.islice(itertools.cycle(range(4, 9)), 40)]
    hits = 0
    for seed, points in enumerate(fixtures):
        result = kmeans(points, 2, seed=seed, debug=True)
        if sse_of(points, result.assignments) <= best_two_partition_sse(points) + 1e-9:
            hits += 1
    assert hits >= 38


@pytest.mark.parametrize("seed", range(10))
def test_restarts_never_worse_than_one_run(seed):
    points = np.random.default_rng(seed).normal(size=(8, 2))
    single = kmeans(points, 3, seed=seed, n_init=1)
    several = kmeans(points, 3, seed=seed)
    assert several.sse <= single.sse + 1e-12


def test_invalid_n_init():
    with pytest.raises(ValueError):
        kmeans([[0.0], [1.0]], 1, n_init=0)


@pytest.mark.parametrize("seed", range(5))
def test_sse_never_increases(seed):
    points = np.random.default_rng(seed).normal(size=(40, 4))
    result = kmeans(points, 6, seed=seed, debug=True)
    history = result.sse_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
    assert result.iterations >= 1
