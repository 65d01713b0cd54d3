"""Ensembles of model recommendation trees for landmark estimation.

A pool of expert models each covers one view cluster; at test time a
recommendation forest maps detection-score features to a rating vector on
the probability simplex, and the pool's shape responses are blended by
that rating into landmark and visibility predictions.
"""

from .classforest import (
    ClassForest,
    ClassLeaf,
    derive_labels,
    entropy,
    predict_posterior_rating,
    predict_posterior_rating_many,
    predict_top_vote,
    predict_top_vote_many,
    train_class_forest,
)
from .data import (
    ModelProtocol,
    Prediction,
    ResponseDataset,
    SchemaError,
    load_dataset,
    load_metadata,
    rating_vector,
    save_dataset,
    save_metadata,
)
from .forest import (
    Leaf,
    RecForest,
    RecTrainConfig,
    Split,
    SplitParams,
    accuracy_maximizing_threshold,
    aggregate_rating,
    blend_prediction,
    calibrate_gamma,
    evaluate_split,
    fit_node_rating,
    node_cost,
    predict,
    predict_many,
    train_forest,
    train_tree,
)
from .metrics import (
    CompareConfig,
    EvalReport,
    ced_curve,
    format_comparison,
    run_comparison,
    sample_error,
    visibility_scores,
)
from .seeds import derive_seed
from .serialize import load_forest, save_forest
from .simplex import (
    SimplexProblem,
    SimplexSolution,
    oracle_solve,
    project_to_simplex,
    solve,
)
from .synth import (
    GenConfig,
    LatentSample,
    face_template,
    generate,
    metadata_arrays,
    preset_config,
    two_cluster_config,
)

__all__ = [
    "ClassForest",
    "ClassLeaf",
    "CompareConfig",
    "EvalReport",
    "GenConfig",
    "LatentSample",
    "Leaf",
    "ModelProtocol",
    "Prediction",
    "RecForest",
    "RecTrainConfig",
    "ResponseDataset",
    "SchemaError",
    "SimplexProblem",
    "SimplexSolution",
    "Split",
    "SplitParams",
    "accuracy_maximizing_threshold",
    "aggregate_rating",
    "blend_prediction",
    "calibrate_gamma",
    "ced_curve",
    "derive_labels",
    "derive_seed",
    "entropy",
    "evaluate_split",
    "face_template",
    "fit_node_rating",
    "format_comparison",
    "generate",
    "load_dataset",
    "load_forest",
    "load_metadata",
    "metadata_arrays",
    "node_cost",
    "oracle_solve",
    "predict",
    "predict_many",
    "predict_posterior_rating",
    "predict_posterior_rating_many",
    "predict_top_vote",
    "predict_top_vote_many",
    "preset_config",
    "project_to_simplex",
    "rating_vector",
    "run_comparison",
    "sample_error",
    "save_dataset",
    "save_forest",
    "save_metadata",
    "solve",
    "train_class_forest",
    "train_forest",
    "train_tree",
    "two_cluster_config",
    "visibility_scores",
]

__version__ = "0.1.0"
