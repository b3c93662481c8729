"""The ensemble-generation methods and their shared prediction contract.

Five builders produce a common Ensemble value: ``order`` (top-k by overall
validation score), ``classy`` (per-class top-k with voter masks), ``cluster``
(best model per k-means cluster), ``lexigarden`` (repeated lexicase-style
survivor selection), and ``classy_cluster`` (the per-class selection run
within each cluster). Order, cluster, and lexigarden ensembles predict by
plain majority vote; classy ensembles aggregate probability matrices weighted
by overall validation score and masked by per-class voter permissions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .cluster import Clustering
from .data import Dataset
from .metrics import classwise_scores, majority_vote, weighted_argmax

MAJORITY_METHODS = frozenset({"order", "cluster", "lexigarden"})
WEIGHTED_METHODS = frozenset({"classy", "classy_cluster"})
METHODS = ("order", "classy", "cluster", "lexigarden", "classy_cluster")


@dataclass(frozen=True)
class ModelRecord:
    """A model's validation footprint: scores, per-class recall, predictions."""

    model_id: int
    validation_score: float
    per_class_accuracy: np.ndarray
    val_proba: np.ndarray
    val_pred: np.ndarray

    def __post_init__(self):
        pca = np.asarray(self.per_class_accuracy, dtype=np.float64)
        proba = np.asarray(self.val_proba, dtype=np.float64)
        pred = np.asarray(self.val_pred, dtype=np.int64)
        if proba.ndim != 2 or proba.shape[1] != pca.shape[0]:
            raise ValueError("val_proba must be (n_val, n_classes)")
        if not np.array_equal(pred, np.argmax(proba, axis=1)):
            raise ValueError("val_pred must be the row argmax of val_proba")
        for arr in (pca, proba, pred):
            arr.setflags(write=False)
        object.__setattr__(self, "per_class_accuracy", pca)
        object.__setattr__(self, "val_proba", proba)
        object.__setattr__(self, "val_pred", pred)

    @classmethod
    def from_validation(
        cls, model_id: int, val_proba: np.ndarray, y_val: np.ndarray, n_classes: int
    ) -> "ModelRecord":
        val_proba = np.asarray(val_proba, dtype=np.float64)
        val_pred = np.argmax(val_proba, axis=1)
        scores = classwise_scores(y_val, val_pred, n_classes)
        return cls(model_id, scores.overall, scores.per_class, val_proba, val_pred)


@dataclass(frozen=True)
class Ensemble:
    """Members with per-member weights and per-class voter masks.

    Majority-vote methods carry all-ones weights and voter masks, so their
    prediction degenerates to a plain majority vote over member labels.
    """

    method: str
    members: tuple[int, ...]
    weights: np.ndarray
    voters: np.ndarray
    k_param: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'")
        if not self.members:
            raise ValueError("ensemble has no members")
        weights = np.asarray(self.weights, dtype=np.float64)
        voters = np.asarray(self.voters, dtype=np.int8)
        if weights.shape != (len(self.members),):
            raise ValueError("one weight per member required")
        if voters.ndim != 2 or voters.shape[0] != len(self.members):
            raise ValueError("voters must be (n_members, n_classes)")
        if self.method in WEIGHTED_METHODS:
            if np.any(voters.sum(axis=1) < 1):
                raise ValueError("every member needs at least one voter class")
            if np.any(voters.sum(axis=0) < 1):
                raise ValueError("every class needs at least one voter")
        weights.setflags(write=False)
        voters.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "voters", voters)

    @property
    def size(self) -> int:
        return len(self.members)


def _check_records(records: Sequence[ModelRecord]):
    if not records:
        raise ValueError("empty record list")


def _clamped(topk: int, limit: int) -> int:
    if topk < 1:
        raise ValueError(f"topk must be >= 1, got {topk}")
    return min(topk, limit)


def _majority_ensemble(method: str, members: Sequence[int], n_classes: int, k: int) -> Ensemble:
    m = len(members)
    return Ensemble(
        method, tuple(members), np.ones(m), np.ones((m, n_classes), dtype=np.int8), k
    )


def build_order(records: Sequence[ModelRecord], topk: int) -> Ensemble:
    """Top-k models by overall validation score, majority-vote aggregation."""
    _check_records(records)
    k = _clamped(topk, len(records))
    ranked = sorted(records, key=lambda r: (-r.validation_score, r.model_id))
    n_classes = records[0].per_class_accuracy.shape[0]
    return _majority_ensemble(
        "order", [r.model_id for r in ranked[:k]], n_classes, topk
    )


def _classy_members(
    records: Sequence[ModelRecord], n_classes: int, topk: int,
    members: list[int], weights: list[float], voter_rows: list[np.ndarray],
    position: dict[int, int],
):
    """Accumulate per-class top-k voters from ``records`` into the output lists."""
    k = _clamped(topk, len(records))
    for c in range(n_classes):
        ranked = sorted(
            records,
            key=lambda r: (-r.per_class_accuracy[c], -r.validation_score, r.model_id),
        )
        for rec in ranked[:k]:
            pos = position.get(rec.model_id)
            if pos is None:
                pos = len(members)
                position[rec.model_id] = pos
                members.append(rec.model_id)
                weights.append(rec.validation_score)
                voter_rows.append(np.zeros(n_classes, dtype=np.int8))
            voter_rows[pos][c] = 1


def build_classy(records: Sequence[ModelRecord], n_classes: int, topk: int) -> Ensemble:
    """Per-class top-k selection with voter masks and score-weighted voting.

    For each class, models are ranked by that class's validation recall
    (ties by overall score, then by lower model id) and the top k gain voter
    permission for the class. A model selected for several classes appears
    once with several voter bits.
    """
    _check_records(records)
    members: list[int] = []
    weights: list[float] = []
    voter_rows: list[np.ndarray] = []
    _classy_members(records, n_classes, topk, members, weights, voter_rows, {})
    return Ensemble(
        "classy", tuple(members), np.array(weights), np.stack(voter_rows), topk
    )


def build_cluster(records: Sequence[ModelRecord], clustering: Clustering) -> Ensemble:
    """The highest-scoring model of each cluster, majority-vote aggregation."""
    _check_records(records)
    by_id = {r.model_id: r for r in records}
    missing = [i for i in by_id if i not in clustering.assignments]
    if missing:
        raise ValueError(f"clustering does not cover model ids {missing}")
    groups: dict[int, list[ModelRecord]] = {}
    for rec in records:
        groups.setdefault(clustering.assignments[rec.model_id], []).append(rec)
    members = []
    for j in sorted(groups):
        best = min(groups[j], key=lambda r: (-r.validation_score, r.model_id))
        members.append(best.model_id)
    n_classes = records[0].per_class_accuracy.shape[0]
    return _majority_ensemble("cluster", members, n_classes, clustering.k)


def lexicase_filter(
    pred_matrix: np.ndarray, labels: np.ndarray, order: Sequence[int]
) -> list[int]:
    """Walk instances in ``order``, keeping models that answer each correctly.

    An instance no surviving model answers correctly is skipped, so the pool
    never empties; the walk stops early once a single survivor remains.
    Returns surviving row indices of ``pred_matrix``.
    """
    alive = np.ones(pred_matrix.shape[0], dtype=bool)
    count = pred_matrix.shape[0]
    for t in order:
        if count == 1:
            break
        narrowed = alive & (pred_matrix[:, t] == labels[t])
        c = int(narrowed.sum())
        if c > 0:
            alive = narrowed
            count = c
    return np.flatnonzero(alive).tolist()


def build_lexigarden(
    records: Sequence[ModelRecord],
    validation: Dataset,
    garden_size: int,
    rng: np.random.Generator,
) -> Ensemble:
    """garden_size rounds of shuffled lexicase filtering, one survivor each.

    The garden is a multiset: a model surviving several rounds appears (and
    later votes) that many times.
    """
    _check_records(records)
    if garden_size < 1:
        raise ValueError(f"garden_size must be >= 1, got {garden_size}")
    labels = validation.labels
    preds = np.stack([r.val_pred for r in records])
    if preds.shape[1] != labels.shape[0]:
        raise ValueError("validation predictions do not match the validation set")
    members = []
    for _ in range(garden_size):
        order = rng.permutation(labels.shape[0])
        survivors = lexicase_filter(preds, labels, order)
        pick = survivors[int(rng.integers(len(survivors)))]
        members.append(records[pick].model_id)
    n_classes = records[0].per_class_accuracy.shape[0]
    return _majority_ensemble("lexigarden", members, n_classes, garden_size)


def build_classy_cluster(
    records: Sequence[ModelRecord],
    clustering: Clustering,
    n_classes: int,
    topk: int,
) -> Ensemble:
    """Per-class top-k selection run inside each cluster, one global ensemble.

    A model can gain voter bits only from the ranking within its own cluster.
    With a single cluster this reduces exactly to the classy builder.
    """
    _check_records(records)
    missing = [r.model_id for r in records if r.model_id not in clustering.assignments]
    if missing:
        raise ValueError(f"clustering does not cover model ids {missing}")
    groups: dict[int, list[ModelRecord]] = {}
    for rec in records:
        groups.setdefault(clustering.assignments[rec.model_id], []).append(rec)
    members: list[int] = []
    weights: list[float] = []
    voter_rows: list[np.ndarray] = []
    position: dict[int, int] = {}
    for j in sorted(groups):
        _classy_members(
            groups[j], n_classes, topk, members, weights, voter_rows, position
        )
    return Ensemble(
        "classy_cluster", tuple(members), np.array(weights), np.stack(voter_rows), topk
    )


def ensemble_predict(
    ensemble: Ensemble,
    proba_provider: Mapping[int, np.ndarray] | Callable[[int], np.ndarray],
) -> np.ndarray:
    """Predicted labels for the query set behind ``proba_provider``.

    Classy methods accumulate weight * voter_mask * probability over members
    and take the row argmax; majority-vote methods reduce each member to hard
    labels first and take the per-sample majority. All ties resolve to the
    lowest class index.
    """
    if callable(proba_provider):
        resolve = proba_provider
    else:
        resolve = proba_provider.__getitem__

    def member_proba(model_id: int) -> np.ndarray:
        try:
            proba = resolve(model_id)
        except KeyError:
            raise ValueError(f"missing member {model_id} in probability provider")
        return np.asarray(proba, dtype=np.float64)

    n_classes = ensemble.voters.shape[1]
    if ensemble.method in WEIGHTED_METHODS:
        scores: np.ndarray | None = None
        for pos, model_id in enumerate(ensemble.members):
            proba = member_proba(model_id)
            if proba.ndim != 2 or proba.shape[1] != n_classes:
                raise ValueError(
                    f"member {model_id} probabilities have shape {proba.shape}, "
                    f"expected (n, {n_classes})"
                )
            if scores is None:
                scores = np.zeros_like(proba)
            elif proba.shape != scores.shape:
                raise ValueError("members disagree on the query-set shape")
            scores += ensemble.weights[pos] * (ensemble.voters[pos] * proba)
        return weighted_argmax(scores)

    votes = None
    for pos, model_id in enumerate(ensemble.members):
        proba = member_proba(model_id)
        if proba.ndim != 2:
            raise ValueError(f"member {model_id} probabilities must be 2-D")
        if votes is None:
            votes = np.empty((len(ensemble.members), proba.shape[0]), dtype=np.int64)
        elif proba.shape[0] != votes.shape[1]:
            raise ValueError("members disagree on the query-set shape")
        votes[pos] = np.argmax(proba, axis=1)
    return majority_vote(votes)
