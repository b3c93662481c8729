"""Per-class accuracy, balanced accuracy, and vote counting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClasswiseScores:
    """Per-class recall plus its mean over classes present in the truth vector.

    Classes absent from the truth vector score 0 and are excluded from the
    overall mean, which is the balanced accuracy.
    """

    per_class: np.ndarray
    overall: float
    present_mask: np.ndarray

    def __post_init__(self):
        per_class = np.asarray(self.per_class, dtype=np.float64)
        present = np.asarray(self.present_mask, dtype=bool)
        per_class.setflags(write=False)
        present.setflags(write=False)
        object.__setattr__(self, "per_class", per_class)
        object.__setattr__(self, "present_mask", present)


def classwise_scores(
    y_true: np.ndarray, y_pred: np.ndarray, n_classes: int
) -> ClasswiseScores:
    """Recall per class and balanced accuracy over the classes present."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("empty label vectors")
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.max() >= n_classes or y_pred.max() >= n_classes:
        raise ValueError(f"labels exceed n_classes={n_classes}")
    counts = np.bincount(y_true, minlength=n_classes).astype(np.float64)
    correct = np.bincount(
        y_true[y_true == y_pred], minlength=n_classes
    ).astype(np.float64)
    present = counts > 0
    per_class = np.where(present, correct / np.maximum(counts, 1.0), 0.0)
    overall = float(per_class[present].mean())
    return ClasswiseScores(per_class, overall, present)


def majority_vote(label_matrix: np.ndarray) -> np.ndarray:
    """Most frequent label per column of (n_members, n_samples) votes.

    Duplicate members count multiply; ties resolve to the lowest class index.
    """
    votes = np.asarray(label_matrix, dtype=np.int64)
    if votes.ndim != 2 or votes.shape[0] == 0:
        raise ValueError("label matrix must be (n_members >= 1, n_samples)")
    n_members, n_samples = votes.shape
    if votes.min() < 0:
        raise ValueError("vote labels must be non-negative")
    n_labels = int(votes.max()) + 1
    flat = votes + np.arange(n_samples)[None, :] * n_labels
    counts = np.bincount(flat.ravel(), minlength=n_samples * n_labels)
    return np.argmax(counts.reshape(n_samples, n_labels), axis=1)


def weighted_argmax(scores: np.ndarray) -> np.ndarray:
    """Row argmax of an (n_samples, n_classes) score matrix, ties to lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"scores must be 2-D, got shape {scores.shape}")
    return np.argmax(scores, axis=1)
