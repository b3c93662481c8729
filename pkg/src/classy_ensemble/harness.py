"""Per-dataset replicate experiments: split, scale, fit a pool, select
ensembles on validation, evaluate on test, and aggregate across replicates.

Selection is structurally leak-free: ``prepare_replicate`` sees only the
train and validation parts, and the test part is consumed exclusively by
``evaluate_replicate``.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .cluster import Clustering, kmeans, model_output_vectors
from .data import (
    DataError,
    Dataset,
    Split,
    apply_scaler,
    fit_scaler,
    split,
)
from .ensembles import (
    METHODS,
    Ensemble,
    ModelRecord,
    build_classy,
    build_classy_cluster,
    build_cluster,
    build_lexigarden,
    build_order,
    ensemble_predict,
)
from .learners import FittedModel, PoolSpec, predict_proba, sample_and_fit_pool
from .metrics import classwise_scores
from .stats import permutation_test

DEFAULT_K_GRID = (1, 2, 3, 5, 20, 50, 100, 250)
DEFAULT_METHODS = ("order", "classy", "cluster", "lexigarden")

# SeedSequence entropy namespaces; replicate streams and experiment-level
# streams use different leading tags so they can never collide.
_NS_REPLICATE = 1
_NS_EXPERIMENT = 2
_T_SPLIT = 0
_T_POOL = 1
_T_LEXI = 2
_T_KMEANS = 3
_T_KMEANS_CLASSY = 4


@dataclass(frozen=True)
class ExperimentConfig:
    """Replicate-experiment parameters; defaults are the standard protocol."""

    n_replicates: int = 30
    n_models: int = 250
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    methods: tuple[str, ...] = DEFAULT_METHODS
    alpha: float = 0.05
    permutation_rounds: int = 10000
    seed: int = 0
    stratified: bool = True
    time_limit: float | None = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.n_models < 1:
            raise ValueError("n_models must be >= 1")
        if not self.k_grid or any(k < 1 for k in self.k_grid):
            raise ValueError("k_grid entries must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        if not self.methods:
            raise ValueError("at least one method required")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.permutation_rounds < 1:
            raise ValueError("permutation_rounds must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))

    def to_dict(self) -> dict:
        return {
            "n_replicates": self.n_replicates,
            "n_models": self.n_models,
            "k_grid": list(self.k_grid),
            "fractions": list(self.fractions),
            "methods": list(self.methods),
            "alpha": self.alpha,
            "permutation_rounds": self.permutation_rounds,
            "seed": self.seed,
            "stratified": self.stratified,
            "time_limit": self.time_limit,
        }


@dataclass(frozen=True)
class MethodSelection:
    method: str
    best_k: int
    validation_score: float
    ensemble: Ensemble
    k_scores: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class ReplicateSelection:
    """Everything chosen on validation data, before test data is touched."""

    best_single_id: int
    best_single_family: str
    best_single_validation: float
    methods: tuple[MethodSelection, ...]


@dataclass(frozen=True)
class BestSingleResult:
    model_id: int
    family: str
    validation_score: float
    test_score: float


@dataclass(frozen=True)
class MethodResult:
    method: str
    best_k: int
    size: int
    validation_score: float
    test_score: float
    k_scores: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    best_single: BestSingleResult
    methods: tuple[MethodResult, ...]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    median_test_score: float
    observed_stat: float
    p_value: float
    win: bool
    unique: bool
    median_size: float
    median_best_k: float


@dataclass(frozen=True)
class ExperimentReport:
    dataset_name: str
    config: ExperimentConfig
    complete: bool
    replicates: tuple[ReplicateResult, ...]
    best_single_median: float
    method_summaries: tuple[MethodSummary, ...]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def _build_ensemble(
    method: str,
    records: Sequence[ModelRecord],
    validation: Dataset,
    k: int,
    config: ExperimentConfig,
    rep: int,
    clusterings: dict[tuple[int, int], Clustering],
    vectors,
) -> Ensemble:
    n_classes = validation.n_classes
    if method == "order":
        return build_order(records, k)
    if method == "classy":
        return build_classy(records, n_classes, k)
    if method == "lexigarden":
        rng = _stream(config.seed, _NS_REPLICATE, rep, _T_LEXI, k)
        return build_lexigarden(records, validation, k, rng)
    if method == "cluster":
        key = (_T_KMEANS, k)
        if key not in clusterings:
            rng = _stream(config.seed, _NS_REPLICATE, rep, _T_KMEANS, k)
            clusterings[key] = kmeans(vectors, k, rng)
        return build_cluster(records, clusterings[key])
    if method == "classy_cluster":
        # the grid value drives both the cluster count and the per-class topk
        key = (_T_KMEANS_CLASSY, k)
        if key not in clusterings:
            rng = _stream(config.seed, _NS_REPLICATE, rep, _T_KMEANS_CLASSY, k)
            clusterings[key] = kmeans(vectors, k, rng)
        return build_classy_cluster(records, clusterings[key], n_classes, k)
    raise ValueError(f"unknown method '{method}'")


def prepare_replicate(
    train: Dataset,
    validation: Dataset,
    config: ExperimentConfig,
    rep: int,
) -> tuple[list[FittedModel], list[ModelRecord], ReplicateSelection]:
    """Fit the pool and make every selection decision on validation data only."""
    pool_seed = int(
        _stream(config.seed, _NS_REPLICATE, rep, _T_POOL).integers(0, 2**63)
    )
    models = sample_and_fit_pool(
        PoolSpec(n_models=config.n_models, seed=pool_seed), train
    )
    records = [
        ModelRecord.from_validation(
            m.model_id,
            predict_proba(m, validation.features),
            validation.labels,
            validation.n_classes,
        )
        for m in models
    ]

    best = min(records, key=lambda r: (-r.validation_score, r.model_id))
    family = {m.model_id: m.family for m in models}
    val_provider = {r.model_id: r.val_proba for r in records}

    needs_vectors = bool({"cluster", "classy_cluster"} & set(config.methods))
    vectors = model_output_vectors(records) if needs_vectors else None
    clusterings: dict[tuple[int, int], Clustering] = {}

    selections = []
    for method in config.methods:
        best_k = None
        best_score = -np.inf
        best_ensemble = None
        k_scores = []
        for k in config.k_grid:
            ensemble = _build_ensemble(
                method, records, validation, k, config, rep, clusterings, vectors
            )
            pred = ensemble_predict(ensemble, val_provider)
            score = classwise_scores(
                validation.labels, pred, validation.n_classes
            ).overall
            k_scores.append((k, score))
            if score > best_score:
                best_k, best_score, best_ensemble = k, score, ensemble
        selections.append(
            MethodSelection(method, best_k, best_score, best_ensemble, tuple(k_scores))
        )
    selection = ReplicateSelection(
        best.model_id, family[best.model_id], best.validation_score, tuple(selections)
    )
    return models, records, selection


def evaluate_replicate(
    models: Sequence[FittedModel],
    selection: ReplicateSelection,
    test: Dataset,
    rep: int,
) -> ReplicateResult:
    """Score the already-chosen single model and ensembles on the test part."""
    by_id = {m.model_id: m for m in models}
    cache: dict[int, np.ndarray] = {}

    def test_proba(model_id: int) -> np.ndarray:
        if model_id not in cache:
            cache[model_id] = predict_proba(by_id[model_id], test.features)
        return cache[model_id]

    best_pred = np.argmax(test_proba(selection.best_single_id), axis=1)
    best_score = classwise_scores(test.labels, best_pred, test.n_classes).overall
    best_single = BestSingleResult(
        selection.best_single_id,
        selection.best_single_family,
        selection.best_single_validation,
        best_score,
    )

    method_results = []
    for sel in selection.methods:
        pred = ensemble_predict(sel.ensemble, test_proba)
        score = classwise_scores(test.labels, pred, test.n_classes).overall
        method_results.append(
            MethodResult(
                sel.method,
                sel.best_k,
                sel.ensemble.size,
                sel.validation_score,
                score,
                sel.k_scores,
            )
        )
    return ReplicateResult(rep, best_single, tuple(method_results))


def run_replicate(
    dataset: Dataset, config: ExperimentConfig, rep: int
) -> ReplicateResult:
    """One full replicate: split, scale, fit pool, select, and evaluate."""
    try:
        rng = _stream(config.seed, _NS_REPLICATE, rep, _T_SPLIT)
        parts = split(dataset, config.fractions, config.stratified, rng)
        scaler = fit_scaler(parts.train)
        train = apply_scaler(scaler, parts.train)
        validation = apply_scaler(scaler, parts.validation)
        test = apply_scaler(scaler, parts.test)
        models, _, selection = prepare_replicate(train, validation, config, rep)
        return evaluate_replicate(models, selection, test, rep)
    except (DataError, ValueError) as exc:
        raise type(exc)(f"replicate {rep}: {exc}") from exc


def summarize(
    replicates: Sequence[ReplicateResult], config: ExperimentConfig
) -> tuple[float, tuple[MethodSummary, ...]]:
    """Recompute the per-method aggregate block from per-replicate results."""
    best_scores = np.array([r.best_single.test_score for r in replicates])
    best_median = float(np.median(best_scores))
    partial = []
    for m_index, method in enumerate(config.methods):
        scores = np.array([r.methods[m_index].test_score for r in replicates])
        sizes = np.array([r.methods[m_index].size for r in replicates])
        ks = np.array([r.methods[m_index].best_k for r in replicates])
        rng = _stream(config.seed, _NS_EXPERIMENT, m_index)
        perm = permutation_test(
            best_scores, scores, config.permutation_rounds, config.alpha, rng
        )
        partial.append(
            (
                method,
                float(np.median(scores)),
                perm.observed_stat,
                perm.p_value,
                perm.significant,
                float(np.median(sizes)),
                float(np.median(ks)),
            )
        )
    n_wins = sum(1 for p in partial if p[4])
    summaries = tuple(
        MethodSummary(
            method=method,
            median_test_score=med,
            observed_stat=obs,
            p_value=p,
            win=win,
            unique=win and n_wins == 1,
            median_size=size,
            median_best_k=best_k,
        )
        for method, med, obs, p, win, size, best_k in partial
    )
    return best_median, summaries


def run_experiment(
    dataset: Dataset,
    config: ExperimentConfig,
    jobs: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentReport:
    """Run all replicates (optionally in parallel) and aggregate the report.

    With a time limit, replicates are launched in chunks and the run stops
    early once the limit is exceeded; the report is then flagged incomplete.
    Results are identical for any ``jobs`` value.
    """
    jobs = max(1, jobs)
    started = time.monotonic()
    results: list[ReplicateResult] = []
    indices = list(range(config.n_replicates))
    complete = True
    chunk = jobs if config.time_limit is not None else len(indices)
    pos = 0
    with Parallel(n_jobs=jobs) as parallel:
        while pos < len(indices):
            batch = indices[pos : pos + chunk]
            results.extend(
                parallel(delayed(run_replicate)(dataset, config, r) for r in batch)
            )
            pos += len(batch)
            if progress is not None:
                progress(pos, len(indices))
            if (
                config.time_limit is not None
                and pos < len(indices)
                and time.monotonic() - started > config.time_limit
            ):
                complete = False
                break
    best_median, summaries = summarize(results, config)
    return ExperimentReport(
        dataset.source_name, config, complete, tuple(results), best_median, summaries
    )


# ---------------------------------------------------------------------------
# External prediction bundles (pre-trained models evaluated elsewhere)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateReport:
    """Best-single vs ensemble comparison over an external prediction bundle."""

    bundle_name: str
    n_models: int
    best_single: BestSingleResult
    methods: tuple[MethodResult, ...]


def _read_matrix(path: Path, what: str) -> np.ndarray:
    try:
        rows = []
        with open(path, "rt", newline="") as fh:
            for r, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise DataError(f"non-numeric value in {what} at row {r}") from None
        if not rows:
            raise DataError(f"empty matrix file for {what}")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise DataError(f"ragged rows in {what}")
        return np.asarray(rows, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read {what}: {exc}") from exc


def _read_labels(path: Path, what: str) -> np.ndarray:
    mat = _read_matrix(path, what)
    if mat.shape[1] != 1:
        raise DataError(f"{what} must hold one label per line")
    labels = mat.ravel()
    if np.any(labels != np.round(labels)):
        raise DataError(f"{what} must hold integer class labels")
    return labels.astype(np.int64)


def load_bundle(
    bundle_dir: str | Path,
) -> tuple[str, int, list[str], list[np.ndarray], list[np.ndarray], np.ndarray, np.ndarray]:
    """Read and validate an external prediction bundle directory."""
    bundle = Path(bundle_dir)
    meta_path = bundle / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no such bundle: missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed meta.json: {exc}") from exc
    if "n_classes" not in meta or "models" not in meta:
        raise DataError("meta.json must define 'n_classes' and 'models'")
    n_classes = int(meta["n_classes"])
    names = [str(n) for n in meta["models"]]
    if n_classes < 2:
        raise DataError("single-class dataset: n_classes must be >= 2")
    if not names:
        raise DataError("meta.json lists no models")

    val_labels = _read_labels(bundle / "val_labels.csv", "val_labels.csv")
    test_labels = _read_labels(bundle / "test_labels.csv", "test_labels.csv")
    for what, labels in (("val_labels", val_labels), ("test_labels", test_labels)):
        if labels.min() < 0 or labels.max() >= n_classes:
            raise DataError(f"{what} outside [0, {n_classes})")

    val_probas, test_probas = [], []
    for i, name in enumerate(names):
        for tag, labels, store in (
            ("val", val_labels, val_probas),
            ("test", test_labels, test_probas),
        ):
            fname = f"{tag}_proba_{i}.csv"
            mat = _read_matrix(bundle / fname, f"{fname} (model {name})")
            if mat.shape != (labels.shape[0], n_classes):
                raise DataError(
                    f"model {name}: {fname} has shape {mat.shape}, expected "
                    f"({labels.shape[0]}, {n_classes})"
                )
            bad = np.flatnonzero(np.abs(mat.sum(axis=1) - 1.0) > 1e-6)
            if bad.size:
                raise DataError(
                    f"model {name}: {fname} row {bad[0] + 1} does not sum to 1"
                )
            store.append(mat)
    return bundle.name, n_classes, names, val_probas, test_probas, val_labels, test_labels


def aggregate_external(
    bundle_dir: str | Path, config: ExperimentConfig
) -> AggregateReport:
    """Run the selection and evaluation stages over pre-computed predictions.

    Training is skipped entirely: model records come from the bundle's
    validation probabilities, the k-grid search runs as in a replicate, and
    the chosen ensembles are scored with the bundle's test probabilities.
    """
    name, n_classes, names, val_probas, test_probas, val_labels, test_labels = (
        load_bundle(bundle_dir)
    )
    records = [
        ModelRecord.from_validation(i, proba, val_labels, n_classes)
        for i, proba in enumerate(val_probas)
    ]
    validation = Dataset(
        np.zeros((val_labels.shape[0], 1)), val_labels, n_classes, ("unused",), name
    )
    val_provider = {r.model_id: r.val_proba for r in records}
    test_provider = {i: m for i, m in enumerate(test_probas)}

    best = min(records, key=lambda r: (-r.validation_score, r.model_id))
    best_pred = np.argmax(test_provider[best.model_id], axis=1)
    best_single = BestSingleResult(
        best.model_id,
        names[best.model_id],
        best.validation_score,
        classwise_scores(test_labels, best_pred, n_classes).overall,
    )

    needs_vectors = bool({"cluster", "classy_cluster"} & set(config.methods))
    vectors = model_output_vectors(records) if needs_vectors else None
    clusterings: dict[tuple[int, int], Clustering] = {}
    method_results = []
    for method in config.methods:
        best_k = None
        best_score = -np.inf
        best_ensemble = None
        k_scores = []
        for k in config.k_grid:
            ensemble = _build_ensemble(
                method, records, validation, k, config, 0, clusterings, vectors
            )
            pred = ensemble_predict(ensemble, val_provider)
            score = classwise_scores(val_labels, pred, n_classes).overall
            k_scores.append((k, score))
            if score > best_score:
                best_k, best_score, best_ensemble = k, score, ensemble
        pred = ensemble_predict(best_ensemble, test_provider)
        test_score = classwise_scores(test_labels, pred, n_classes).overall
        method_results.append(
            MethodResult(
                method, best_k, best_ensemble.size, best_score, test_score,
                tuple(k_scores),
            )
        )
    return AggregateReport(name, len(names), best_single, tuple(method_results))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _replicate_dict(r: ReplicateResult) -> dict:
    return {
        "index": r.index,
        "best_single": {
            "model_id": r.best_single.model_id,
            "family": r.best_single.family,
            "validation_score": r.best_single.validation_score,
            "test_score": r.best_single.test_score,
        },
        "methods": [
            {
                "method": m.method,
                "best_k": m.best_k,
                "size": m.size,
                "validation_score": m.validation_score,
                "test_score": m.test_score,
                "k_scores": [[k, s] for k, s in m.k_scores],
            }
            for m in r.methods
        ],
    }


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "dataset": report.dataset_name,
        "config": report.config.to_dict(),
        "complete": report.complete,
        "n_replicates_run": len(report.replicates),
        "replicates": [_replicate_dict(r) for r in report.replicates],
        "summary": {
            "best_single": {"median_test_score": report.best_single_median},
            "methods": [
                {
                    "method": s.method,
                    "median_test_score": s.median_test_score,
                    "observed_stat": s.observed_stat,
                    "p_value": s.p_value,
                    "win": s.win,
                    "unique": s.unique,
                    "median_size": s.median_size,
                    "median_best_k": s.median_best_k,
                }
                for s in report.method_summaries
            ],
        },
    }


def aggregate_to_dict(report: AggregateReport) -> dict:
    return {
        "bundle": report.bundle_name,
        "n_models": report.n_models,
        "best_single": {
            "model_id": report.best_single.model_id,
            "name": report.best_single.family,
            "validation_score": report.best_single.validation_score,
            "test_score": report.best_single.test_score,
        },
        "methods": [
            {
                "method": m.method,
                "best_k": m.best_k,
                "size": m.size,
                "validation_score": m.validation_score,
                "test_score": m.test_score,
                "k_scores": [[k, s] for k, s in m.k_scores],
            }
            for m in report.methods
        ],
    }


def dump_json(payload: dict) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def experiment_csv_rows(report: ExperimentReport) -> list[list]:
    header = [
        "method", "median_test_score", "observed_stat", "p_value", "win",
        "unique", "median_size", "median_best_k",
    ]
    rows: list[list] = [header]
    rows.append(
        ["best_single", repr(report.best_single_median), "", "", "", "", "", ""]
    )
    for s in report.method_summaries:
        rows.append(
            [
                s.method,
                repr(s.median_test_score),
                repr(s.observed_stat),
                repr(s.p_value),
                str(s.win).lower(),
                str(s.unique).lower(),
                repr(s.median_size),
                repr(s.median_best_k),
            ]
        )
    return rows


def aggregate_csv_rows(report: AggregateReport) -> list[list]:
    header = ["method", "best_k", "size", "validation_score", "test_score"]
    rows: list[list] = [header]
    rows.append(
        [
            f"best_single:{report.best_single.family}",
            "",
            "1",
            repr(report.best_single.validation_score),
            repr(report.best_single.test_score),
        ]
    )
    for m in report.methods:
        rows.append(
            [m.method, str(m.best_k), str(m.size), repr(m.validation_score),
             repr(m.test_score)]
        )
    return rows


def summary_lines(report: ExperimentReport) -> list[str]:
    lines = [
        f"{'best_single':<16} median_test={report.best_single_median:.4f}"
    ]
    for s in report.method_summaries:
        lines.append(
            f"{s.method:<16} median_test={s.median_test_score:.4f}  "
            f"p={s.p_value:.4f}  win={'yes' if s.win else 'no':<3}  "
            f"unique={'yes' if s.unique else 'no':<3}  "
            f"size={s.median_size:g}  best_k={s.median_best_k:g}"
        )
    return lines
