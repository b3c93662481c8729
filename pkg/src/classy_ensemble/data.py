"""Dataset ingestion, train/validation/test splitting, and feature standardization."""
from __future__ import annotations

import csv
import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed file, incompatible shapes, or an impossible split request."""


@dataclass(frozen=True)
class Dataset:
    """An in-memory classification dataset.

    Labels are dense class indices in [0, n_classes). Arrays are coerced to
    float64/int64 and frozen so instances can be shared across workers.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: tuple[str, ...] = ()
    source_name: str = ""

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] == 0:
            raise DataError("dataset has no rows")
        if labels.shape != (feats.shape[0],):
            raise DataError(
                f"labels length {labels.shape} does not match {feats.shape[0]} feature rows"
            )
        if self.n_classes < 2:
            raise DataError("single-class dataset: n_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        names = self.feature_names
        if not names:
            names = tuple(f"f{j}" for j in range(feats.shape[1]))
        elif len(names) != feats.shape[1]:
            raise DataError(f"{len(names)} feature names for {feats.shape[1]} columns")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset sharing this dataset's class space and metadata."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx], self.labels[idx], self.n_classes,
            self.feature_names, self.source_name,
        )


@dataclass(frozen=True)
class Split:
    train: Dataset
    validation: Dataset
    test: Dataset


@dataclass(frozen=True)
class Scaler:
    """Per-feature centering and scaling fitted on a training set."""

    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        scales = np.asarray(self.scales, dtype=np.float64)
        if means.shape != scales.shape or means.ndim != 1:
            raise DataError("means and scales must be equal-length vectors")
        if np.any(scales <= 0):
            raise DataError("scales must be strictly positive")
        means.setflags(write=False)
        scales.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)


def _open_text(path: Path):
    if path.name.endswith(".gz"):
        return gzip.open(path, "rt", newline="")
    return open(path, "rt", newline="")


def _detect_delimiter(path: Path, override: str | None) -> str:
    if override is not None:
        return override
    name = path.name
    if name.endswith(".gz"):
        name = name[:-3]
    return "\t" if name.endswith(".tsv") else ","


def load_csv(
    path: str | Path,
    target_column: str = "target",
    has_header: bool = True,
    delimiter: str | None = None,
) -> Dataset:
    """Load a delimited text file into a Dataset.

    The target column is located by header name (or, without a header, by a
    numeric column index in ``target_column``, defaulting to the last column).
    Raw target values are mapped to dense indices 0..n_classes-1 in sorted
    order of the distinct values (numeric sort when all values parse as
    numbers, lexicographic otherwise). Gzip-compressed files are detected by
    a ``.gz`` suffix; ``.tsv`` selects a tab delimiter unless overridden.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    delim = _detect_delimiter(path, delimiter)

    with _open_text(path) as fh:
        rows = [row for row in csv.reader(fh, delimiter=delim) if row]
    if not rows:
        raise DataError(f"empty file: {path}")

    if has_header:
        header = [h.strip() for h in rows[0]]
        data_rows = rows[1:]
        if target_column not in header:
            raise DataError(f"missing target column '{target_column}' in {path}")
        target_idx = header.index(target_column)
    else:
        data_rows = rows
        n_cols = len(rows[0])
        header = [f"f{j}" for j in range(n_cols)]
        if target_column == "target":
            target_idx = n_cols - 1
        elif target_column.lstrip("-").isdigit():
            target_idx = int(target_column)
            if not 0 <= target_idx < n_cols:
                raise DataError(f"target column index {target_idx} out of range")
        else:
            raise DataError(
                f"missing target column '{target_column}': file has no header; "
                "pass a column index instead"
            )
        header[target_idx] = "target"

    if not data_rows:
        raise DataError(f"no data rows in {path}")

    n_cols = len(header)
    feature_names = tuple(h for j, h in enumerate(header) if j != target_idx)
    features = np.empty((len(data_rows), n_cols - 1), dtype=np.float64)
    raw_targets: list[str] = []
    for r, row in enumerate(data_rows, start=1):
        if len(row) != n_cols:
            raise DataError(f"row {r} has {len(row)} fields, expected {n_cols}")
        j_out = 0
        for j, cell in enumerate(row):
            if j == target_idx:
                raw_targets.append(cell.strip())
                continue
            try:
                features[r - 1, j_out] = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric value '{cell.strip()}' at row {r}, "
                    f"column '{header[j]}'"
                ) from None
            j_out += 1

    try:
        numeric = [float(t) for t in raw_targets]
        distinct = sorted(set(numeric))
        mapping = {v: i for i, v in enumerate(distinct)}
        labels = np.array([mapping[v] for v in numeric], dtype=np.int64)
    except ValueError:
        distinct_s = sorted(set(raw_targets))
        mapping_s = {v: i for i, v in enumerate(distinct_s)}
        labels = np.array([mapping_s[v] for v in raw_targets], dtype=np.int64)
        distinct = distinct_s

    if len(distinct) < 2:
        raise DataError(
            f"single-class dataset: target column '{header[target_idx]}' has "
            "one distinct value"
        )
    return Dataset(features, labels, len(distinct), feature_names, path.name)


def write_csv(dataset: Dataset, path: str | Path, delimiter: str = ",") -> None:
    """Write a dataset with a header row and a final ``target`` column."""
    path = Path(path)
    opener = gzip.open(path, "wt", newline="") if path.name.endswith(".gz") else open(
        path, "wt", newline=""
    )
    with opener as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(list(dataset.feature_names) + ["target"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def largest_remainder_counts(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Apportion n items to parts by floor quotas plus largest remainders.

    Remainder ties go to the earlier part, so the result is deterministic.
    """
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda p: (-(quotas[p] - counts[p]), p))
    for p in order[:leftover]:
        counts[p] += 1
    return counts


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    stratified: bool = True,
    rng: np.random.Generator | None = None,
) -> Split:
    """Partition a dataset into train/validation/test parts.

    With ``stratified`` (the default) each class is apportioned to the parts
    by largest-remainder rounding of its own row count, so class proportions
    are preserved within one sample per part. Without it a single uniform
    shuffle is cut at the part boundaries.
    """
    if rng is None:
        rng = np.random.default_rng()
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError(f"fractions must be three positive values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got sum {sum(fractions)!r}")

    n = dataset.n_samples
    parts: list[list[np.ndarray]] = [[], [], []]
    if stratified:
        for c in range(dataset.n_classes):
            idx_c = np.flatnonzero(dataset.labels == c)
            if idx_c.size == 0:
                continue
            perm = rng.permutation(idx_c)
            counts = largest_remainder_counts(idx_c.size, fractions)
            stop0 = counts[0]
            stop1 = counts[0] + counts[1]
            parts[0].append(perm[:stop0])
            parts[1].append(perm[stop0:stop1])
            parts[2].append(perm[stop1:])
    else:
        perm = rng.permutation(n)
        counts = largest_remainder_counts(n, fractions)
        stop0 = counts[0]
        stop1 = counts[0] + counts[1]
        parts[0].append(perm[:stop0])
        parts[1].append(perm[stop0:stop1])
        parts[2].append(perm[stop1:])

    names = ("train", "validation", "test")
    indices = []
    for name, chunks in zip(names, parts):
        idx = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        if idx.size == 0:
            raise DataError(f"split would produce an empty {name} part")
        indices.append(idx)
    return Split(*(dataset.take(idx) for idx in indices))


def fit_scaler(train: Dataset) -> Scaler:
    """Per-feature mean and population standard deviation of the training set.

    Zero-variance features get scale 1 so they are centered, never divided.
    """
    means = train.features.mean(axis=0)
    stds = train.features.std(axis=0)
    scales = np.where(stds > 1e-12, stds, 1.0)
    return Scaler(means, scales)


def apply_scaler(scaler: Scaler, d: Dataset) -> Dataset:
    if d.n_features != scaler.means.shape[0]:
        raise DataError(
            f"scaler fitted for {scaler.means.shape[0]} features, "
            f"dataset has {d.n_features}"
        )
    transformed = (d.features - scaler.means) / scaler.scales
    return Dataset(transformed, d.labels, d.n_classes, d.feature_names, d.source_name)


def make_blobs(
    n_samples: int,
    n_features: int,
    n_classes: int,
    separation: float,
    noise_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    source_name: str = "blobs",
) -> Dataset:
    """Gaussian blobs with unit-variance clusters and optional label noise.

    Class centers are drawn at random and rescaled so the minimum pairwise
    center distance equals ``separation`` (in cluster standard deviations).
    Each label is flipped to a uniformly random other class with probability
    ``noise_rate``.
    """
    if rng is None:
        rng = np.random.default_rng()
    if n_classes < 2:
        raise DataError("single-class dataset: n_classes must be >= 2")
    if n_samples < n_classes:
        raise DataError(f"need at least {n_classes} samples for {n_classes} classes")
    if not 0.0 <= noise_rate < 1.0:
        raise DataError(f"noise_rate must lie in [0, 1), got {noise_rate}")
    if separation < 0:
        raise DataError(f"separation must be non-negative, got {separation}")

    centers = rng.normal(size=(n_classes, n_features))
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    min_dist = dists[np.triu_indices(n_classes, k=1)].min()
    if min_dist < 1e-12:
        centers += rng.normal(size=centers.shape) * 1e-6
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=2))
        min_dist = dists[np.triu_indices(n_classes, k=1)].min()
    centers *= separation / min_dist if separation > 0 else 0.0

    counts = largest_remainder_counts(n_samples, tuple([1.0 / n_classes] * n_classes))
    features = np.empty((n_samples, n_features))
    labels = np.empty(n_samples, dtype=np.int64)
    row = 0
    for c, cnt in enumerate(counts):
        features[row : row + cnt] = centers[c] + rng.normal(size=(cnt, n_features))
        labels[row : row + cnt] = c
        row += cnt

    if noise_rate > 0:
        flip = rng.random(n_samples) < noise_rate
        offsets = rng.integers(1, n_classes, size=n_samples)
        labels = np.where(flip, (labels + offsets) % n_classes, labels)

    order = rng.permutation(n_samples)
    return Dataset(features[order], labels[order], n_classes, (), source_name)
