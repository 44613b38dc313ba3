"""k-means clustering with silhouette-based cluster-count selection.

The silhouette score uses distances to centroids instead of all-pairs
mean distances, keeping each scoring pass O(N*k*D).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

_MAX_LLOYD_ITERS = 100


@dataclass
class ClusteringResult:
    labels: np.ndarray
    centroids: np.ndarray
    mean_silhouette: float  # nan when there is a single cluster

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, k) squared distances without materializing (N, k, D)."""
    sq = (
        np.einsum("ij,ij->i", points, points)[:, None]
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
        - 2.0 * points @ centroids.T
    )
    return np.maximum(sq, 0.0)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centroid drawn with probability
    proportional to squared distance from the nearest chosen one."""
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for m in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:  # every point already coincides with a centroid
            idx = int(rng.integers(n))
        else:
            u = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(closest), u)), n - 1)
        centroids[m] = points[idx]
        closest = np.minimum(closest, ((points - centroids[m]) ** 2).sum(axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> ClusteringResult:
    """Lloyd's iteration from a k-means++ seed.

    Runs until assignments stop changing (at most 100 sweeps).  A cluster
    that empties is reseeded to the point farthest from its assigned
    centroid, so every returned cluster is nonempty.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if n == 0:
        raise ContractError("no points to cluster")
    if not 1 <= k <= n:
        raise ContractError(f"k={k} outside [1, {n}]")
    if k == 1:
        return ClusteringResult(
            labels=np.zeros(n, dtype=int),
            centroids=points.mean(axis=0, keepdims=True),
            mean_silhouette=math.nan,
        )

    centroids = _seed_centroids(points, k, rng)
    labels = None
    for _ in range(_MAX_LLOYD_ITERS):
        d2 = _sq_distances(points, centroids)
        new_labels = d2.argmin(axis=1)
        counts = np.bincount(new_labels, minlength=k)
        if (counts == 0).any():
            assigned = d2[np.arange(n), new_labels]
            for m in np.flatnonzero(counts == 0):
                # steal the worst-assigned point, but only from a cluster
                # that keeps at least one member (k <= n guarantees a donor)
                donors = np.flatnonzero(counts[new_labels] > 1)
                far = int(donors[assigned[donors].argmax()])
                counts[new_labels[far]] -= 1
                counts[m] = 1
                centroids[m] = points[far]
                new_labels[far] = m
                assigned[far] = 0.0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for m in range(k):
            centroids[m] = points[labels == m].mean(axis=0)
    score = silhouette_score(points, labels)
    return ClusteringResult(labels=labels, centroids=centroids, mean_silhouette=score)


def silhouette_score(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean over points of (b - a)/max(a, b), with a the distance to the
    own-cluster centroid and b the distance to the nearest other centroid.

    Points sitting exactly on two coincident centroids contribute 0.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    labels = np.asarray(labels, dtype=int)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ContractError("silhouette needs at least two nonempty clusters")
    centroids = np.stack([points[labels == m].mean(axis=0) for m in uniq])
    remap = {m: i for i, m in enumerate(uniq)}
    idx = np.array([remap[m] for m in labels])
    dist = np.sqrt(_sq_distances(points, centroids))
    n = len(points)
    a = dist[np.arange(n), idx]
    masked = dist.copy()
    masked[np.arange(n), idx] = np.inf
    b = masked.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0.0, (b - a) / np.where(denom > 0.0, denom, 1.0), 0.0)
    return float(s.mean())


def select_clusters(
    points: np.ndarray,
    k_max: int = 8,
    accept_threshold: float = 0.25,
    rng: np.random.Generator | None = None,
) -> ClusteringResult:
    """Pick the cluster count by maximal silhouette over k = 2..k_max.

    Falls back to a single cluster when no k clears ``accept_threshold``
    (the silhouette is undefined at k=1, so weak structure must be
    rejected by a floor).  Ties pick the smallest k.
    """
    if rng is None:
        raise ContractError("select_clusters requires an explicit generator")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    top_k = min(k_max, n)
    single = ClusteringResult(
        labels=np.zeros(n, dtype=int),
        centroids=points.mean(axis=0, keepdims=True),
        mean_silhouette=math.nan,
    )
    if top_k < 2:
        return single
    best: ClusteringResult | None = None
    streams = rng.spawn(top_k - 1)
    for k in range(2, top_k + 1):
        result = kmeans(points, k, streams[k - 2])
        if best is None or result.mean_silhouette > best.mean_silhouette:
            best = result
    if best is None or best.mean_silhouette < accept_threshold:
        return single
    return best
