"""Seeded k-means over model validation-output vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_MAX_ITER = 300
_N_INIT = 10


@dataclass(frozen=True)
class ModelOutputVector:
    """A model's flattened validation probability matrix, keyed by model id."""

    model_id: int
    vector: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(np.asarray(self.vector, dtype=np.float64)).ravel()
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class Clustering:
    """A hard partition of model output vectors into k non-empty clusters."""

    k: int
    assignments: dict[int, int]
    centroids: np.ndarray
    inertia: float
    inertia_history: tuple[float, ...] = ()


def model_output_vectors(records: Sequence, mode: str = "proba") -> list[ModelOutputVector]:
    """Output vectors for clustering: flattened probabilities or one-hot labels.

    ``records`` only needs ``model_id``, ``val_proba``, and ``val_pred``
    attributes. The probability mode is the default; the one-hot mode exists
    for comparing against clustering on hard predictions.
    """
    out = []
    for rec in records:
        if mode == "proba":
            vec = rec.val_proba.ravel()
        elif mode == "onehot":
            n, c = rec.val_proba.shape
            onehot = np.zeros((n, c))
            onehot[np.arange(n), rec.val_pred] = 1.0
            vec = onehot.ravel()
        else:
            raise ValueError(f"unknown mode '{mode}'")
        out.append(ModelOutputVector(rec.model_id, vec))
    return out


def _pairwise_sq_dist(X, centroids):
    d2 = (
        (X**2).sum(axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(X, k, rng):
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick anything
            centroids[j] = X[rng.integers(n)]
            continue
        i = rng.choice(n, p=d2 / total)
        centroids[j] = X[i]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _cluster_means(X, assign, k, sizes):
    onehot = np.zeros((X.shape[0], k))
    onehot[np.arange(X.shape[0]), assign] = 1.0
    return (onehot.T @ X) / sizes[:, None]


def _lloyd(X, k, rng):
    """One k-means++ start plus Lloyd iterations to an assignment fixpoint."""
    n = X.shape[0]
    centroids = _kmeanspp_init(X, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(_MAX_ITER):
        d2 = _pairwise_sq_dist(X, centroids)
        new_assign = np.argmin(d2, axis=1)
        sizes = np.bincount(new_assign, minlength=k)
        for j in np.flatnonzero(sizes == 0):
            # reseed an empty cluster with the worst-served point
            point_d2 = d2[np.arange(n), new_assign].copy()
            point_d2[sizes[new_assign] <= 1] = -np.inf
            farthest = int(np.argmax(point_d2))
            sizes[new_assign[farthest]] -= 1
            new_assign[farthest] = j
            sizes[j] += 1
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centroids = _cluster_means(X, assign, k, sizes)
        history.append(float(((X - centroids[assign]) ** 2).sum()))
    return assign, history


def kmeans(
    vectors: Sequence[ModelOutputVector],
    k: int,
    rng: np.random.Generator,
    n_init: int = _N_INIT,
) -> Clustering:
    """Best of ``n_init`` k-means++ starts, each run to a Lloyd fixpoint.

    k is clamped to the number of distinct vectors. Empty clusters are
    reseeded with the point farthest from its assigned centroid; each run
    stops at an assignment fixpoint or after 300 iterations and its recorded
    inertia history is non-increasing. When the vectors have more dimensions
    than there are vectors, iterations run in the exact row-space projection
    (an isometry, so assignments and inertia are unchanged) and centroids are
    mapped back afterwards.
    """
    if not vectors:
        raise ValueError("empty vector list")
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    ids = [v.model_id for v in vectors]
    X = np.stack([v.vector for v in vectors])
    n = X.shape[0]

    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    n_distinct = uniq.shape[0]
    if k >= n_distinct:
        # every distinct vector is its own cluster; only duplicates contribute
        centroids = uniq
        assign = inverse.astype(np.int64)
        inertia = float(((X - centroids[assign]) ** 2).sum())
        return Clustering(
            n_distinct, dict(zip(ids, assign.tolist())), centroids, inertia,
            (inertia,),
        )
    if k == 1:
        centroid = X.mean(axis=0, keepdims=True)
        inertia = float(((X - centroid) ** 2).sum())
        return Clustering(
            1, dict.fromkeys(ids, 0), centroid, inertia, (inertia,)
        )

    centered = X - X.mean(axis=0)
    if X.shape[1] > n:
        # wide data: iterate in an exact isometry of the row space
        gram = centered @ centered.T
        eigvals, eigvecs = np.linalg.eigh(gram)
        Y = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    else:
        Y = centered

    best_assign = None
    best_history = None
    for _ in range(n_init):
        assign, history = _lloyd(Y, k, rng)
        if best_history is None or history[-1] < best_history[-1]:
            best_assign, best_history = assign, history

    sizes = np.bincount(best_assign, minlength=k)
    return Clustering(
        k,
        dict(zip(ids, best_assign.tolist())),
        _cluster_means(X, best_assign, k, sizes),
        best_history[-1],
        tuple(best_history),
    )
