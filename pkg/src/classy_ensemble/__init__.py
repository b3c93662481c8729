"""Classy Ensemble and baseline ensemble-generation methods, with a
replicate benchmark harness and permutation-test significance reporting."""

from .cluster import Clustering, ModelOutputVector, kmeans, model_output_vectors
from .data import (
    DataError,
    Dataset,
    Scaler,
    Split,
    apply_scaler,
    fit_scaler,
    load_csv,
    make_blobs,
    split,
    write_csv,
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
    lexicase_filter,
)
from .harness import (
    AggregateReport,
    ExperimentConfig,
    ExperimentReport,
    MethodResult,
    ReplicateResult,
    aggregate_external,
    evaluate_replicate,
    prepare_replicate,
    run_experiment,
    run_replicate,
)
from .learners import (
    FAMILIES,
    FittedModel,
    HyperRanges,
    PoolSpec,
    fit_model,
    predict,
    predict_proba,
    sample_and_fit_pool,
)
from .metrics import ClasswiseScores, classwise_scores, majority_vote, weighted_argmax
from .stats import PermutationResult, permutation_test

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "ClasswiseScores",
    "Clustering",
    "DataError",
    "Dataset",
    "Ensemble",
    "ExperimentConfig",
    "ExperimentReport",
    "FAMILIES",
    "FittedModel",
    "HyperRanges",
    "METHODS",
    "MethodResult",
    "ModelOutputVector",
    "ModelRecord",
    "PermutationResult",
    "PoolSpec",
    "ReplicateResult",
    "Scaler",
    "Split",
    "aggregate_external",
    "apply_scaler",
    "build_classy",
    "build_classy_cluster",
    "build_cluster",
    "build_lexigarden",
    "build_order",
    "classwise_scores",
    "ensemble_predict",
    "evaluate_replicate",
    "fit_model",
    "fit_scaler",
    "kmeans",
    "lexicase_filter",
    "load_csv",
    "majority_vote",
    "make_blobs",
    "model_output_vectors",
    "permutation_test",
    "predict",
    "predict_proba",
    "prepare_replicate",
    "run_experiment",
    "run_replicate",
    "sample_and_fit_pool",
    "split",
    "weighted_argmax",
    "write_csv",
]
