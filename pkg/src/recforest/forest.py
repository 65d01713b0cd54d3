"""Recommendation trees: joint split/rating training and blended inference.

A recommendation tree is a binary decision tree over recommendation features
whose leaves store model rating vectors.  Split quality is the reduction in
blended-shape reconstruction cost, where each candidate child's rating is
re-optimized by simplex-constrained least squares.  Inference routes a
feature vector through every tree, averages leaf ratings weighted by leaf
training-sample counts, and blends the pool responses with the result.

Node cost H is the MEAN squared residual per visible landmark instance, and
split gain weights children by their visible-instance counts.  With those
conventions the parent cost decomposes exactly into the children's weighted
costs under the parent rating, so an accepted split's gain is a true
(nonnegative) cost reduction and a content-free split gains exactly zero.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import ModelProtocol, Prediction, ResponseDataset, rating_vector
from .seeds import derive_seed
from .simplex import SimplexProblem, solve, solve_gram_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitParams:
    """Routing rule: feature `feature_index` <= `threshold` goes left."""

    feature_index: int
    threshold: float

    def __post_init__(self):
        if self.feature_index < 0:
            raise ValueError("feature_index must be nonnegative")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass
class Split:
    params: SplitParams
    gain: float
    left: object
    right: object


@dataclass(eq=False)
class Leaf:
    rating: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.rating = rating_vector(self.rating)
        if self.sample_count < 1:
            raise ValueError("leaf sample_count must be >= 1")

    def __eq__(self, other):
        return (
            isinstance(other, Leaf)
            and self.sample_count == other.sample_count
            and np.array_equal(self.rating, other.rating)
        )


@dataclass
class RecForest:
    trees: list
    protocol: ModelProtocol
    gamma: float = 0.5

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("forest needs at least one tree")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class RecTrainConfig:
    """Hyperparameters shared by the recommendation and classification forests.

    `candidate_feature_count=None` means ceil(sqrt(F)), resolved per dataset.
    `bootstrap_fraction=1.0` trains every tree on the full sample set (the
    deterministic draw); fractions below 1 sample ceil(fraction*M) indices
    with replacement from the tree's own RNG stream.
    """

    tree_count: int = 10
    max_depth: int = 12
    min_samples_per_leaf: int = 10
    candidate_feature_count: int | None = None
    candidate_threshold_count: int = 10
    min_gain: float = 1e-9
    bootstrap_fraction: float = 1.0
    rng_seed: int = 0

    def validate(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_per_leaf < 1:
            raise ValueError("min_samples_per_leaf must be >= 1")
        if self.candidate_feature_count is not None and self.candidate_feature_count < 1:
            raise ValueError("candidate_feature_count must be >= 1")
        if self.candidate_threshold_count < 1:
            raise ValueError("candidate_threshold_count must be >= 1")
        if not self.min_gain >= 0:
            raise ValueError("min_gain must be >= 0")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap_fraction must be in (0, 1]")


# ---------------------------------------------------------------------------
# Node cost and rating fit, stacked-row form (the reference path; training
# uses the algebraically identical Gram aggregates below)
# ---------------------------------------------------------------------------

def _stack_problem(subset, dataset: ResponseDataset):
    """SimplexProblem over every visible landmark instance of `subset`.

    `subset` is a sample-index multiset; repeated indices contribute their
    instances repeatedly, matching bootstrap semantics.
    """
    idx = np.asarray(subset, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("subset must be a non-empty 1-D index array")
    vis = dataset.visible[idx]
    s_pos, n_pos = np.nonzero(vis)
    if s_pos.size == 0:
        raise ValueError("subset has no visible landmark instances")
    m_pos = idx[s_pos]
    targets = dataset.ground_truth[m_pos, n_pos]
    candidates = dataset.responses[m_pos, :, n_pos, :]
    return SimplexProblem(targets, candidates), s_pos.size


def node_cost(subset, dataset: ResponseDataset, w) -> float:
    """Mean squared blended-shape residual per visible landmark instance."""
    w = rating_vector(w)
    problem, count = _stack_problem(subset, dataset)
    if w.size != dataset.model_count:
        raise ValueError("rating length does not match the model pool")
    return problem.objective(w) / count


def fit_node_rating(subset, dataset: ResponseDataset, tolerance=1e-8,
                    max_iterations=1000):
    """Optimal rating for a node subset. Returns (rating, mean cost)."""
    problem, count = _stack_problem(subset, dataset)
    sol = solve(problem, tolerance=tolerance, max_iterations=max_iterations)
    return rating_vector(sol.w), sol.objective / count


def evaluate_split(subset, dataset: ResponseDataset, params: SplitParams):
    """Gain of one candidate split and the fitted child ratings.

    Returns (gain, left_rating, right_rating, left_subset, right_subset).
    Candidates that leave a child empty, or without any visible landmark
    instance, are infeasible: gain is -inf and the ratings are None.
    """
    idx = np.asarray(subset, dtype=np.int64)
    if params.feature_index >= dataset.feature_count:
        raise ValueError("feature_index out of range for this dataset")
    go_left = dataset.features[idx, params.feature_index] <= params.threshold
    left, right = idx[go_left], idx[~go_left]
    k_left = int(dataset.visible[left].sum())
    k_right = int(dataset.visible[right].sum())
    if left.size == 0 or right.size == 0 or k_left == 0 or k_right == 0:
        return -np.inf, None, None, left, right
    _, parent_cost = fit_node_rating(idx, dataset)
    w_left, cost_left = fit_node_rating(left, dataset)
    w_right, cost_right = fit_node_rating(right, dataset)
    k_parent = k_left + k_right
    gain = parent_cost - (k_left * cost_left + k_right * cost_right) / k_parent
    return gain, w_left, w_right, left, right


# ---------------------------------------------------------------------------
# Training fast path: per-sample Gram aggregates
# ---------------------------------------------------------------------------

class _RecCriterion:
    """Per-sample sufficient statistics for the blended-residual cost.

    For sample m, over its visible landmarks: P[m] = sum x_c.x_e,
    lin[m] = sum x_c.y, sq[m] = sum |y|^2, inst[m] = visible count.  A node's
    simplex problem in Gram form is just the sum of these over its subset,
    so candidate children cost one masked matrix product instead of a
    re-stacking of rows.
    """

    def __init__(self, dataset: ResponseDataset, tolerance=1e-8,
                 max_iterations=1000):
        resp = dataset.responses
        vis = dataset.visible
        gt0 = np.where(vis[:, :, None], dataset.ground_truth, 0.0)
        masked = resp * vis[:, None, :, None]
        self.P = np.einsum("mcnd,mend->mce", masked, resp)
        self.lin = np.einsum("mcnd,mnd->mc", resp, gt0)
        self.sq = np.einsum("mnd,mnd->m", gt0, gt0)
        self.inst = vis.sum(axis=1).astype(np.float64)
        self.dim = dataset.model_count
        self.tolerance = tolerance
        self.max_iterations = max_iterations

    def node_stats(self, idx):
        return (
            self.P[idx].sum(axis=0),
            self.lin[idx].sum(axis=0),
            float(self.sq[idx].sum()),
            float(self.inst[idx].sum()),
            idx.size,
        )

    def mask_stats(self, idx, masks):
        """Aggregates for each row of `masks` (Q, S) over the node's rows."""
        m = masks.astype(np.float64)
        return (
            np.einsum("qs,sce->qce", m, self.P[idx]),
            m @ self.lin[idx],
            m @ self.sq[idx],
            m @ self.inst[idx],
            masks.sum(axis=1),
        )

    def weight(self, stats):
        return stats[3]

    def fit(self, stats):
        """(payload, total cost) for one node; total = mean cost * weight."""
        G, h, sq, inst, n = stats
        if inst < 1:
            raise ValueError("node has no visible landmark instances")
        w, _, _ = solve_gram_batch(
            G[None], h[None],
            tolerance=self.tolerance, max_iterations=self.max_iterations,
        )
        w = w[0]
        total = float(w @ G @ w - 2.0 * (h @ w) + sq)
        return w, total

    def fit_batch(self, stats):
        G, h, sq, inst, n = stats
        Q = n.shape[0]
        feasible = (n >= 1) & (inst >= 1)
        payloads = np.zeros((Q, self.dim))
        totals = np.full(Q, np.inf)
        if feasible.any():
            W, _, _ = solve_gram_batch(
                G[feasible], h[feasible],
                tolerance=self.tolerance, max_iterations=self.max_iterations,
            )
            Gw = np.einsum("kij,kj->ki", G[feasible], W)
            totals[feasible] = (
                np.einsum("ki,ki->k", W, Gw)
                - 2.0 * np.einsum("ki,ki->k", h[feasible], W)
                + sq[feasible]
            )
            payloads[feasible] = W
        return payloads, totals, feasible

    def make_leaf(self, payload, sample_count):
        return Leaf(rating=payload, sample_count=sample_count)


def _grow_tree(criterion, features, idx, config, rng):
    """Grow one tree over the sample multiset `idx`; returns (root, counters).

    Candidate features are drawn without replacement, thresholds uniformly
    inside each feature's node range; the best candidate wins by gain with
    ties to the earliest candidate.  RNG is consumed in depth-first node
    order (node, then left subtree, then right subtree).
    """
    counters = {"nodes": 0, "depth": 0}
    F = features.shape[1]
    n_feats = config.candidate_feature_count
    if n_feats is None:
        n_feats = int(math.ceil(math.sqrt(F)))
    n_feats = min(n_feats, F)
    n_thresh = config.candidate_threshold_count

    def build(idx, depth, stats, fitted):
        counters["nodes"] += 1
        counters["depth"] = max(counters["depth"], depth)
        payload, total_cost = fitted
        if depth >= config.max_depth:
            return criterion.make_leaf(payload, idx.size)
        feats = rng.choice(F, size=n_feats, replace=False)
        node_feats = features[idx][:, feats]
        lo = node_feats.min(axis=0)
        hi = node_feats.max(axis=0)
        taus = rng.uniform(lo[:, None], hi[:, None], size=(n_feats, n_thresh))
        left_masks = (node_feats.T[:, None, :] <= taus[:, :, None]).reshape(
            n_feats * n_thresh, idx.size
        )
        stats_left = criterion.mask_stats(idx, left_masks)
        stats_right = criterion.mask_stats(idx, ~left_masks)
        pay_left, tot_left, feas_left = criterion.fit_batch(stats_left)
        pay_right, tot_right, feas_right = criterion.fit_batch(stats_right)
        feasible = feas_left & feas_right
        with np.errstate(invalid="ignore"):
            gains = np.where(
                feasible,
                (total_cost - tot_left - tot_right) / criterion.weight(stats),
                -np.inf,
            )
        best = int(np.argmax(gains))
        n_left = int(left_masks[best].sum())
        n_right = idx.size - n_left
        if (
            not gains[best] > config.min_gain
            or n_left < config.min_samples_per_leaf
            or n_right < config.min_samples_per_leaf
        ):
            return criterion.make_leaf(payload, idx.size)
        f_pos, t_pos = divmod(best, n_thresh)
        params = SplitParams(int(feats[f_pos]), float(taus[f_pos, t_pos]))
        row = lambda s, i: tuple(part[i] for part in s)
        mask = left_masks[best]
        left = build(
            idx[mask], depth + 1, row(stats_left, best),
            (pay_left[best], tot_left[best]),
        )
        right = build(
            idx[~mask], depth + 1, row(stats_right, best),
            (pay_right[best], tot_right[best]),
        )
        return Split(params=params, gain=float(gains[best]), left=left, right=right)

    stats0 = criterion.node_stats(idx)
    fit0 = criterion.fit(stats0)
    return build(idx, 0, stats0, fit0), counters


def bootstrap_indices(config: RecTrainConfig, sample_count: int, rng):
    """The sample multiset a tree trains on.

    Fraction 1.0 is the deterministic identity draw (consumes no RNG);
    smaller fractions draw ceil(fraction*M) indices with replacement.
    """
    if config.bootstrap_fraction == 1.0:
        return np.arange(sample_count, dtype=np.int64)
    size = int(math.ceil(config.bootstrap_fraction * sample_count))
    return rng.integers(0, sample_count, size=size, dtype=np.int64)


def train_tree(dataset: ResponseDataset, config: RecTrainConfig, rng):
    """Train a single recommendation tree on the full dataset.

    `rng` is a numpy Generator; the tree is a pure function of (dataset,
    config, rng state).
    """
    config.validate()
    criterion = _RecCriterion(dataset)
    idx = np.arange(dataset.sample_count, dtype=np.int64)
    root, _ = _grow_tree(criterion, dataset.features, idx, config, rng)
    return root


def _rec_tree_task(dataset, config, tree_index):
    rng = np.random.default_rng(derive_seed(config.rng_seed, "tree", tree_index))
    idx = bootstrap_indices(config, dataset.sample_count, rng)
    start = time.perf_counter()
    criterion = _RecCriterion(dataset)
    root, counters = _grow_tree(criterion, dataset.features, idx, config, rng)
    elapsed = time.perf_counter() - start
    return root, counters["depth"], counters["nodes"], elapsed


def _run_tree_tasks(task, dataset, config, workers):
    """Run per-tree training tasks, in order, optionally across processes.

    The reduction is ordered by tree index, so results are identical for any
    worker count.
    """
    indices = range(config.tree_count)
    if workers <= 1:
        results = [task(dataset, config, t) for t in indices]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, config.tree_count)) as pool:
            futures = [pool.submit(task, dataset, config, t) for t in indices]
            results = [f.result() for f in futures]
    for t, (_, depth, nodes, elapsed) in enumerate(results):
        logger.info("tree=%d depth=%d nodes=%d elapsed=%.3fs", t, depth, nodes, elapsed)
    return [r[0] for r in results]


def train_forest(dataset: ResponseDataset, config: RecTrainConfig,
                 workers: int = 1) -> RecForest:
    """Train a recommendation forest.

    Tree t draws its bootstrap multiset and split candidates from the stream
    seeded by derive_seed(config.rng_seed, "tree", t), so forests are
    reproducible bit for bit regardless of `workers`.
    """
    config.validate()
    if not dataset.visible.any():
        raise ValueError("dataset has no visible landmark instances")
    trees = _run_tree_tasks(_rec_tree_task, dataset, config, workers)
    return RecForest(trees=trees, protocol=dataset.protocol, gamma=0.5)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def _route_payloads(root, features, payload_of, dim):
    """Route all feature rows; returns (leaf payloads (M, dim), counts (M,))."""
    M = features.shape[0]
    payloads = np.empty((M, dim))
    counts = np.empty(M)
    stack = [(root, np.arange(M, dtype=np.int64))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if isinstance(node, Split):
            go = features[rows, node.params.feature_index] <= node.params.threshold
            stack.append((node.left, rows[go]))
            stack.append((node.right, rows[~go]))
        else:
            payloads[rows] = payload_of(node)
            counts[rows] = node.sample_count
    return payloads, counts


def aggregate_rating(trees, features, dim, payload_of=None) -> np.ndarray:
    """Count-weighted average of leaf payloads across trees, per feature row."""
    if payload_of is None:
        payload_of = lambda leaf: leaf.rating
    M = features.shape[0]
    num = np.zeros((M, dim))
    den = np.zeros(M)
    for root in trees:
        payloads, counts = _route_payloads(root, features, payload_of, dim)
        num += counts[:, None] * payloads
        den += counts
    return num / den[:, None]


def blend_prediction(protocol: ModelProtocol, responses, features, W, gamma):
    """Blend pool responses and detection scores with per-sample ratings W.

    responses (M, C, N, 2), features (M, F), W (M, C).  Returns (landmarks
    (M, N, 2), confidence (M, N) clamped to [0, 1], flags (M, N)).
    Confidence sums only over models whose protocol marks the landmark
    visible.
    """
    landmarks = np.einsum("mcnd,mc->mnd", responses, W)
    slots = np.where(protocol.masks, protocol.slot_grid, 0)
    scores = features[:, slots] * protocol.masks[None, :, :]
    confidence = np.einsum("mcn,mc->mn", scores, W)
    confidence = np.clip(confidence, 0.0, 1.0)
    return landmarks, confidence, confidence >= gamma


def predict_many(forest: RecForest, responses, features):
    """Batch inference. Returns (landmarks, confidence, flags) arrays."""
    responses = np.asarray(responses, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    proto = forest.protocol
    M = features.shape[0]
    if responses.shape != (M, proto.model_count, proto.landmark_count, 2):
        raise ValueError("responses shape does not match the forest protocol")
    if features.shape != (M, proto.feature_count):
        raise ValueError("features shape does not match the forest protocol")
    W = aggregate_rating(forest.trees, features, proto.model_count)
    return blend_prediction(proto, responses, features, W, forest.gamma)


def predict(forest: RecForest, responses, features) -> Prediction:
    """Single-sample inference: responses (C, N, 2), features (F,)."""
    landmarks, confidence, flags = predict_many(
        forest, np.asarray(responses)[None], np.asarray(features)[None]
    )
    return Prediction(
        landmarks=landmarks[0],
        visibility_confidence=confidence[0],
        visibility_flag=flags[0],
    )


# ---------------------------------------------------------------------------
# Visibility threshold calibration
# ---------------------------------------------------------------------------

def accuracy_maximizing_threshold(confidences, labels):
    """Smallest threshold (among distinct confidences plus 0 and 1) that
    maximizes accuracy of (confidence >= threshold) against boolean labels.

    Returns (threshold, accuracy).
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if conf.size == 0 or conf.shape != labels.shape:
        raise ValueError("confidences and labels must be matching non-empty arrays")
    candidates = np.unique(np.concatenate([conf, [0.0, 1.0]]))
    order = np.argsort(conf, kind="stable")
    sorted_conf = conf[order]
    sorted_labels = labels[order]
    pos_prefix = np.concatenate([[0], np.cumsum(sorted_labels)])
    neg_prefix = np.concatenate([[0], np.cumsum(~sorted_labels)])
    total_pos = pos_prefix[-1]
    cut = np.searchsorted(sorted_conf, candidates, side="left")
    true_pos = total_pos - pos_prefix[cut]
    true_neg = neg_prefix[cut]
    accuracy = (true_pos + true_neg) / conf.size
    best = int(np.argmax(accuracy))  # first max = smallest candidate
    return float(candidates[best]), float(accuracy[best])


def calibrate_gamma(forest: RecForest, dataset: ResponseDataset) -> float:
    """Set forest.gamma to the accuracy-maximizing visibility threshold."""
    if dataset.sample_count == 0:
        raise ValueError("validation dataset is empty")
    _, confidence, _ = predict_many(forest, dataset.responses, dataset.features)
    gamma, _ = accuracy_maximizing_threshold(confidence, dataset.visible)
    forest.gamma = gamma
    return gamma
