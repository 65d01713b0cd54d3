"""Classification-forest baseline: entropy-gain trees over the same features.

The baseline predicts which pool model a sample belongs to.  Two inference
modes consume the trained forest: hard majority vote across trees (the
selected model's response is returned verbatim) and posterior-as-rating,
where count-weighted leaf posteriors are blended exactly like a
recommendation forest's ratings.
"""

import time
from dataclasses import dataclass

import numpy as np

from .data import ModelProtocol, Prediction, ResponseDataset, rating_vector
from .forest import (
    RecTrainConfig,
    _grow_tree,
    _route_payloads,
    _run_tree_tasks,
    aggregate_rating,
    blend_prediction,
    bootstrap_indices,
)
from .seeds import derive_seed


def _check_dims(proto: ModelProtocol, responses, features):
    M = features.shape[0]
    if responses.shape != (M, proto.model_count, proto.landmark_count, 2):
        raise ValueError("responses shape does not match the forest protocol")
    if features.shape != (M, proto.feature_count):
        raise ValueError("features shape does not match the forest protocol")


@dataclass(eq=False)
class ClassLeaf:
    posterior: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.posterior = rating_vector(self.posterior)
        if self.sample_count < 1:
            raise ValueError("leaf sample_count must be >= 1")

    def __eq__(self, other):
        return (
            isinstance(other, ClassLeaf)
            and self.sample_count == other.sample_count
            and np.array_equal(self.posterior, other.posterior)
        )


@dataclass
class ClassForest:
    trees: list
    protocol: ModelProtocol
    gamma: float = 0.5

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("forest needs at least one tree")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def derive_labels(dataset: ResponseDataset, cluster_id=None) -> np.ndarray:
    """Model label per sample.

    Uses the generator-provided cluster ids when given; otherwise falls back
    to the model with the smallest total squared response error over the
    sample's visible landmarks, ties to the smallest index.
    """
    C = dataset.model_count
    if cluster_id is not None:
        labels = np.asarray(cluster_id, dtype=np.int64)
        if labels.shape != (dataset.sample_count,):
            raise ValueError("cluster_id length does not match the dataset")
        if labels.size and (labels.min() < 0 or labels.max() >= C):
            raise ValueError("cluster_id out of range for the model pool")
        return labels.copy()
    gt0 = np.where(dataset.visible[:, :, None], dataset.ground_truth, 0.0)
    diff = dataset.responses - gt0[:, None, :, :]
    sq = np.einsum("mcnd,mcnd->mcn", diff, diff)
    sq = sq * dataset.visible[:, None, :]
    return np.argmin(sq.sum(axis=2), axis=1).astype(np.int64)


def entropy(labels, class_count: int) -> float:
    """Empirical label entropy in nats; 0*ln 0 taken as 0."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("entropy of an empty subset is undefined")
    counts = np.bincount(labels, minlength=class_count).astype(np.float64)
    p = counts / labels.size
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


class _ClassCriterion:
    """Label-count statistics for entropy-gain splitting.

    A node's total cost is n*H(counts) = n*ln n - sum_c counts_c*ln counts_c,
    so the shared gain formula (parent - left - right) / parent_weight is
    exactly the information gain with proportional child weighting.
    """

    def __init__(self, labels, class_count):
        self.one_hot = np.zeros((labels.size, class_count))
        self.one_hot[np.arange(labels.size), labels] = 1.0
        self.dim = class_count

    @staticmethod
    def _total_entropy(counts, n):
        safe = np.where(counts > 0, counts, 1.0)
        plogp = (counts * np.log(safe)).sum(axis=-1)
        n_safe = np.where(n > 0, n, 1.0)
        return n * np.log(n_safe) - plogp

    def node_stats(self, idx):
        counts = self.one_hot[idx].sum(axis=0)
        return counts, idx.size

    def mask_stats(self, idx, masks):
        counts = masks.astype(np.float64) @ self.one_hot[idx]
        return counts, masks.sum(axis=1)

    def weight(self, stats):
        return stats[1]

    def fit(self, stats):
        counts, n = stats
        return counts / n, float(self._total_entropy(counts, float(n)))

    def fit_batch(self, stats):
        counts, n = stats
        feasible = n >= 1
        n_safe = np.where(feasible, n, 1.0).astype(np.float64)
        payloads = counts / n_safe[:, None]
        totals = np.where(feasible, self._total_entropy(counts, n_safe), np.inf)
        return payloads, totals, feasible

    def make_leaf(self, payload, sample_count):
        return ClassLeaf(posterior=payload, sample_count=sample_count)


def _class_tree_task(dataset_and_labels, config, tree_index):
    dataset, labels = dataset_and_labels
    rng = np.random.default_rng(derive_seed(config.rng_seed, "tree", tree_index))
    idx = bootstrap_indices(config, dataset.sample_count, rng)
    start = time.perf_counter()
    criterion = _ClassCriterion(labels, dataset.model_count)
    root, counters = _grow_tree(criterion, dataset.features, idx, config, rng)
    elapsed = time.perf_counter() - start
    return root, counters["depth"], counters["nodes"], elapsed


def train_class_forest(dataset: ResponseDataset, labels,
                       config: RecTrainConfig, workers: int = 1) -> ClassForest:
    """Train the baseline forest on model labels with entropy gain.

    Same tree/bootstrap/candidate RNG discipline as the recommendation
    forest, so comparisons share every hyperparameter.
    """
    config.validate()
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (dataset.sample_count,):
        raise ValueError("labels length does not match the dataset")
    if labels.size and (labels.min() < 0 or labels.max() >= dataset.model_count):
        raise ValueError("labels out of range for the model pool")
    trees = _run_tree_tasks(_class_tree_task, (dataset, labels), config, workers)
    return ClassForest(trees=trees, protocol=dataset.protocol, gamma=0.5)


# ---------------------------------------------------------------------------
# Inference modes
# ---------------------------------------------------------------------------

def _posterior(leaf):
    return leaf.posterior


def predict_top_vote_many(forest: ClassForest, responses, features):
    """Majority vote over trees; the winning model answers alone.

    Each tree votes the argmax of its leaf posterior (ties to the smallest
    model index); the most-voted model c* supplies its responses verbatim,
    with confidence equal to its own detection scores on its protocol's
    visible landmarks and 0 elsewhere.
    """
    responses = np.asarray(responses, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    proto = forest.protocol
    _check_dims(proto, responses, features)
    M = features.shape[0]
    C = proto.model_count
    votes = np.zeros((M, C), dtype=np.int64)
    for root in forest.trees:
        payloads, _ = _route_payloads(root, features, _posterior, C)
        tree_vote = np.argmax(payloads, axis=1)
        votes[np.arange(M), tree_vote] += 1
    winner = np.argmax(votes, axis=1)  # ties to the smallest index
    landmarks = responses[np.arange(M), winner]
    slots = np.where(proto.masks, proto.slot_grid, 0)
    scores = features[:, slots] * proto.masks[None, :, :]
    confidence = np.clip(scores[np.arange(M), winner], 0.0, 1.0)
    return landmarks, confidence, confidence >= forest.gamma


def predict_top_vote(forest: ClassForest, responses, features) -> Prediction:
    landmarks, confidence, flags = predict_top_vote_many(
        forest, np.asarray(responses)[None], np.asarray(features)[None]
    )
    return Prediction(
        landmarks=landmarks[0],
        visibility_confidence=confidence[0],
        visibility_flag=flags[0],
    )


def predict_posterior_rating_many(forest: ClassForest, responses, features):
    """Blend with the count-weighted average posterior as the rating."""
    responses = np.asarray(responses, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    proto = forest.protocol
    _check_dims(proto, responses, features)
    W = aggregate_rating(forest.trees, features, proto.model_count, _posterior)
    return blend_prediction(proto, responses, features, W, forest.gamma)


def predict_posterior_rating(forest: ClassForest, responses, features) -> Prediction:
    landmarks, confidence, flags = predict_posterior_rating_many(
        forest, np.asarray(responses)[None], np.asarray(features)[None]
    )
    return Prediction(
        landmarks=landmarks[0],
        visibility_confidence=confidence[0],
        visibility_flag=flags[0],
    )
