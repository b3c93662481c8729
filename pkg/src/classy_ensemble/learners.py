"""A self-contained pool of randomized base classifiers.

Four families: k-nearest neighbors, a single CART tree, bagged trees with
per-split random feature subsets, and a linear model trained by mini-batch
SGD on the logistic loss. Neighbor and leaf distributions get +1 Laplace
smoothing so no class ever receives exactly zero probability mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._tree import apply_tree, grow_tree
from .data import Dataset

FAMILIES = ("knn", "cart_tree", "bagged_trees", "linear_sgd")


@dataclass(frozen=True)
class HyperRanges:
    """Per-family sampling ranges for pool generation (inclusive bounds)."""

    knn_k: tuple[int, int] = (1, 25)
    tree_depth: tuple[int, int] = (2, 12)
    bag_n_trees: tuple[int, int] = (10, 50)
    bag_depth: tuple[int, int] = (4, 8)
    sgd_log_lr: tuple[float, float] = (-3.0, -1.0)
    sgd_epochs: tuple[int, int] = (10, 50)
    sgd_l2: tuple[float, ...] = (0.0, 1e-4, 1e-2)


@dataclass(frozen=True)
class PoolSpec:
    """How to sample a pool: size, family mix, hyperparameter ranges, seed."""

    n_models: int = 250
    family_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    ranges: HyperRanges = field(default_factory=HyperRanges)
    seed: int = 0

    def __post_init__(self):
        if self.n_models < 1:
            raise ValueError("n_models must be >= 1")
        if len(self.family_weights) != len(FAMILIES):
            raise ValueError(f"need {len(FAMILIES)} family weights")
        if any(w < 0 for w in self.family_weights):
            raise ValueError("family weights must be non-negative")
        if abs(sum(self.family_weights) - 1.0) > 1e-9:
            raise ValueError("family weights must sum to 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


class _KnnState:
    def __init__(self, X, y, k, n_classes):
        self.X = X
        self.y = y
        self.k = k
        self.n_classes = n_classes
        self._row_sq = (X**2).sum(axis=1)

    def predict_proba(self, Q):
        k, C = self.k, self.n_classes
        n = self.X.shape[0]
        out = np.empty((Q.shape[0], C))
        for s in range(0, Q.shape[0], 512):
            block = Q[s : s + 512]
            d2 = (
                (block**2).sum(axis=1)[:, None]
                - 2.0 * block @ self.X.T
                + self._row_sq[None, :]
            )
            # only the set of k nearest matters for counting, not their order
            nbr = np.argpartition(d2, k - 1, axis=1)[:, :k] if k < n else (
                np.broadcast_to(np.arange(n), d2.shape)
            )
            m = block.shape[0]
            flat = np.arange(m)[:, None] * C + self.y[nbr]
            counts = np.bincount(flat.ravel(), minlength=m * C).reshape(m, C)
            out[s : s + 512] = (counts + 1.0) / (k + C)
        return out


class _TreeState:
    def __init__(self, feature, threshold, left, right, leaf_proba):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.leaf_proba = leaf_proba

    @classmethod
    def fit(cls, X, y, n_classes, max_depth, subset_size=None, seed=0):
        d = X.shape[1]
        subset = d if subset_size is None else subset_size
        feature, threshold, left, right, counts, _ = grow_tree(
            np.ascontiguousarray(X),
            np.ascontiguousarray(y),
            n_classes,
            max_depth,
            2,
            subset,
            np.uint64(seed),
        )
        leaf_proba = (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + n_classes)
        return cls(feature, threshold, left, right, leaf_proba)

    def predict_proba(self, Q):
        leaves = apply_tree(
            self.feature, self.threshold, self.left, self.right,
            np.ascontiguousarray(Q),
        )
        return self.leaf_proba[leaves]


class _ForestState:
    def __init__(self, trees):
        self.trees = trees

    def predict_proba(self, Q):
        Q = np.ascontiguousarray(Q)
        total = self.trees[0].predict_proba(Q).copy()
        for tree in self.trees[1:]:
            total += tree.predict_proba(Q)
        return total / len(self.trees)


class _LinearState:
    def __init__(self, W, b):
        self.W = W
        self.b = b

    @classmethod
    def fit(cls, X, y, n_classes, lr, epochs, l2, rng):
        n, d = X.shape
        W = np.zeros((n_classes, d))
        b = np.zeros(n_classes)
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0
        batch = min(32, n)
        for _ in range(epochs):
            order = rng.permutation(n)
            for s in range(0, n, batch):
                rows = order[s : s + batch]
                Z = X[rows] @ W.T + b
                Z -= Z.max(axis=1, keepdims=True)
                P = np.exp(Z)
                P /= P.sum(axis=1, keepdims=True)
                G = (P - onehot[rows]) / rows.size
                W -= lr * (G.T @ X[rows] + l2 * W)
                b -= lr * G.sum(axis=0)
        return cls(W, b)

    def predict_proba(self, Q):
        Z = Q @ self.W.T + self.b
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        return P


class FittedModel:
    """A fitted pool member: identity, family, hyperparameters, trained state."""

    def __init__(self, model_id, family, hyperparameters, n_features, n_classes, impl):
        self.model_id = model_id
        self.family = family
        self.hyperparameters = dict(hyperparameters)
        self.n_features = n_features
        self.n_classes = n_classes
        self._impl = impl

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in sorted(self.hyperparameters.items()))
        return f"FittedModel(id={self.model_id}, {self.family}, {hp})"


def _sample_hyperparameters(family: str, ranges: HyperRanges, rng) -> dict:
    if family == "knn":
        lo, hi = ranges.knn_k
        return {"k": int(rng.integers(lo, hi + 1))}
    if family == "cart_tree":
        lo, hi = ranges.tree_depth
        return {"max_depth": int(rng.integers(lo, hi + 1))}
    if family == "bagged_trees":
        t_lo, t_hi = ranges.bag_n_trees
        d_lo, d_hi = ranges.bag_depth
        return {
            "n_trees": int(rng.integers(t_lo, t_hi + 1)),
            "max_depth": int(rng.integers(d_lo, d_hi + 1)),
        }
    if family == "linear_sgd":
        e_lo, e_hi = ranges.sgd_epochs
        return {
            "learning_rate": float(10.0 ** rng.uniform(*ranges.sgd_log_lr)),
            "epochs": int(rng.integers(e_lo, e_hi + 1)),
            "l2": float(rng.choice(np.asarray(ranges.sgd_l2))),
        }
    raise ValueError(f"unknown family '{family}'")


def fit_model(
    model_id: int,
    family: str,
    hyperparameters: dict,
    train: Dataset,
    rng: np.random.Generator,
) -> FittedModel:
    """Fit one model; out-of-range hyperparameters are clamped, never errors."""
    X = train.features
    y = train.labels
    n, d = X.shape
    C = train.n_classes
    hp = dict(hyperparameters)
    if family == "knn":
        hp["k"] = min(max(1, hp["k"]), n)
        impl = _KnnState(X, y, hp["k"], C)
    elif family == "cart_tree":
        hp["max_depth"] = max(1, hp["max_depth"])
        impl = _TreeState.fit(X, y, C, hp["max_depth"])
    elif family == "bagged_trees":
        hp["n_trees"] = max(1, hp["n_trees"])
        hp["max_depth"] = max(1, hp["max_depth"])
        subset = max(1, math.ceil(math.sqrt(d)))
        trees = []
        for _ in range(hp["n_trees"]):
            boot = rng.integers(0, n, size=n)
            seed = int(rng.integers(0, 2**63))
            trees.append(
                _TreeState.fit(X[boot], y[boot], C, hp["max_depth"], subset, seed)
            )
        impl = _ForestState(trees)
    elif family == "linear_sgd":
        impl = _LinearState.fit(
            X, y, C, hp["learning_rate"], hp["epochs"], hp["l2"], rng
        )
    else:
        raise ValueError(f"unknown family '{family}'")
    return FittedModel(model_id, family, hp, d, C, impl)


def sample_and_fit_pool(spec: PoolSpec, train: Dataset) -> list[FittedModel]:
    """Draw spec.n_models (family, hyperparameters) pairs and fit them all.

    Family and hyperparameter draws come from one stream keyed by spec.seed;
    each model's fitting randomness comes from its own sub-stream keyed by
    (spec.seed, model index), so results are independent of fit order.
    """
    if train.n_samples == 0:
        raise ValueError("empty training set")
    draw_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0)))
    weights = np.asarray(spec.family_weights, dtype=np.float64)
    weights = weights / weights.sum()
    plan = []
    for i in range(spec.n_models):
        family = FAMILIES[int(draw_rng.choice(len(FAMILIES), p=weights))]
        plan.append((i, family, _sample_hyperparameters(family, spec.ranges, draw_rng)))
    models = []
    for i, family, hp in plan:
        fit_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 1, i)))
        models.append(fit_model(i, family, hp, train, fit_rng))
    return models


def predict_proba(model: FittedModel, features: np.ndarray) -> np.ndarray:
    """Row-stochastic (n_samples, n_classes) probability matrix."""
    X = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"model {model.model_id} expects {model.n_features} features, "
            f"got shape {X.shape}"
        )
    return model._impl.predict_proba(X)


def predict(model: FittedModel, features: np.ndarray) -> np.ndarray:
    """Row argmax of predict_proba; probability ties go to the lowest class."""
    return np.argmax(predict_proba(model, features), axis=1)
