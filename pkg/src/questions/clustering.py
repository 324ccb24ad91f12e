"""
Seeded k-means used to pick a diverse subset of questions.

Centroids are initialised with scikit-learn's k-means++ seeding; the Lloyd
iterations, empty-cluster repair and convergence test are done here so the
per-iteration SSE can be recorded and checked.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from sklearn.cluster import kmeans_plusplus

from config.settings import KMEANS_MAX_ITER, KMEANS_N_INIT, KMEANS_TOLERANCE, RANDOM_SEED

logger = logging.getLogger(__name__)


@dataclass
class ClusterSelection:
    k: int
    assignments: List[int]
    centroids: List[np.ndarray]
    selected_indices: List[int]
    sse_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def sse(self) -> float:
        return self.sse_history[-1] if self.sse_history else 0.0


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assign(points: np.ndarray, centroids: np.ndarray):
    d2 = _squared_distances(points, centroids)
    labels = np.argmin(d2, axis=1)
    sse = float(d2[np.arange(len(points)), labels].sum())
    return labels, sse, d2


def _repair_empty(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray,
                  d2: np.ndarray) -> np.ndarray:
    """Move each empty cluster's centroid onto the point farthest from its own centroid."""
    centroids = centroids.copy()
    own = d2[np.arange(len(points)), labels].copy()
    counts = np.bincount(labels, minlength=len(centroids))
    for cluster in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        if not donors.any():
            break
        candidates = np.where(donors, own, -1.0)
        farthest = int(np.argmax(candidates))
        logger.debug("cluster %d empty, reseeded at point %d", cluster, farthest)
        centroids[cluster] = points[farthest]
        counts[labels[farthest]] -= 1
        counts[cluster] += 1
        labels[farthest] = cluster
        own[farthest] = 0.0
    return centroids


def kmeans(points: Sequence[Sequence[float]], k: int, seed: int = RANDOM_SEED,
           max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOLERANCE,
           debug: bool = False, n_init: int = KMEANS_N_INIT) -> ClusterSelection:
    """
    Lloyd's algorithm; deterministic for fixed (points, k, seed).

    Runs ``n_init`` k-means++ initialisations seeded ``seed, seed + 1, ...``
    and keeps the run with the lowest final SSE (earliest run on ties).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    n = len(X)
    if k <= 0:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")

    best = None
    for run in range(n_init):
        result = _lloyd(X, k, seed + run, max_iter, tol, debug)
        if best is None or result.sse < best.sse - 1e-12:
            best = result
    logger.debug("k-means k=%d: best SSE %.6f over %d runs", k, best.sse, n_init)
    return best


def _lloyd(X: np.ndarray, k: int, seed: int, max_iter: int, tol: float,
           debug: bool) -> ClusterSelection:
    centroids, _ = kmeans_plusplus(X, n_clusters=k, random_state=seed)
    centroids = centroids.astype(float)

    labels, sse, d2 = _assign(X, centroids)
    history = [sse]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        updated = centroids.copy()
        for cluster in range(k):
            members = X[labels == cluster]
            if len(members):
                updated[cluster] = members.mean(axis=0)
        if np.any(np.bincount(labels, minlength=k) == 0):
            updated = _repair_empty(X, updated, labels.copy(), _squared_distances(X, updated))
        shift = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        labels, sse, d2 = _assign(X, centroids)
        if debug:
            assert sse <= history[-1] + 1e-9, f"SSE increased: {history[-1]} -> {sse}"
        history.append(sse)
        if shift < tol:
            break

    # duplicated points can still leave a cluster without members
    if np.any(np.bincount(labels, minlength=k) == 0):
        forced = labels.copy()
        centroids = _repair_empty(X, centroids, forced, d2)
        labels = forced
        d2 = _squared_distances(X, centroids)

    selected = []
    for cluster in range(k):
        members = np.flatnonzero(labels == cluster)
        selected.append(int(members[np.argmin(d2[members, cluster])]))

    return ClusterSelection(
        k=k,
        assignments=[int(label) for label in labels],
        centroids=[row.copy() for row in centroids],
        selected_indices=selected,
        sse_history=history,
        iterations=iterations,
    )
