"""Evaluation harness: normalized errors, visibility scoring, comparisons.

Landmark accuracy is the per-sample mean point-to-point distance over
ground-truth-visible landmarks, as a percentage of the sample's normalizer.
Visibility is scored two ways: flag accuracy at the calibrated threshold,
and average precision of ranking landmarks by (1 - confidence) with
invisible as the positive class (non-interpolated AP, so a hand computation
can check it exactly).

`run_comparison` trains and evaluates the five selection strategies on
identical cross-validation splits and derived seeds, calibrating gamma per
strategy per fold on a held-out validation slice of the training folds.
Output contains no timing or environment data, so a fixed seed reproduces
reports byte for byte at any worker count.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .classforest import derive_labels, predict_posterior_rating_many, \
    predict_top_vote_many, train_class_forest
from .data import ResponseDataset
from .forest import RecTrainConfig, accuracy_maximizing_threshold, \
    blend_prediction, predict_many, train_forest
from .seeds import derive_seed

STRATEGIES = (
    "fixed-frontal",
    "noisy-prior",
    "top-vote",
    "posterior-rating",
    "rec-forest",
)


@dataclass
class EvalReport:
    """Pooled evaluation results for one strategy."""

    mean_error: float
    visibility_accuracy: float
    visibility_ap: float | None
    ced_curve: list
    pr_curve: list
    per_sample_errors: np.ndarray


def sample_error(predicted, truth, visible, normalizer) -> float:
    """Mean landmark distance over the visible set, % of the normalizer."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    if normalizer <= 0 or not np.isfinite(normalizer):
        raise ValueError("normalizer must be positive and finite")
    if not visible.any():
        raise ValueError("sample has no visible landmarks to score")
    d = np.linalg.norm(predicted[visible] - truth[visible], axis=1)
    return float(100.0 * np.mean(d) / normalizer)


def visibility_scores(confidences, flags, visible_truth):
    """Score visibility predictions against ground truth.

    Returns (accuracy, ap, pr_curve).  Accuracy is flag agreement.  AP ranks
    landmarks by score = 1 - confidence with invisible as the positive
    class: sum of precision at each positive divided by the positive count,
    computed blockwise over distinct scores so ties share one operating
    point.  No positives in the ground truth makes AP undefined; it is
    returned as None, and the curve is empty.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    flg = np.asarray(flags, dtype=bool).ravel()
    vis = np.asarray(visible_truth, dtype=bool).ravel()
    if conf.shape != flg.shape or conf.shape != vis.shape:
        raise ValueError("confidences, flags, and truth must align")
    if conf.size == 0:
        raise ValueError("no scored landmarks")
    accuracy = float(np.mean(flg == vis))
    positive = ~vis
    total_pos = int(positive.sum())
    if total_pos == 0:
        return accuracy, None, []
    scores = 1.0 - conf
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    cum_pos = np.cumsum(positive[order])
    # operating points: one per distinct score, at the block's last element
    last = np.ones(conf.size, dtype=bool)
    last[:-1] = s_sorted[:-1] != s_sorted[1:]
    ends = np.nonzero(last)[0]
    precision = cum_pos[ends] / (ends + 1.0)
    recall = cum_pos[ends] / total_pos
    gained = np.diff(np.concatenate([[0], cum_pos[ends]]))
    ap = float(np.sum(gained * precision) / total_pos)
    pr_curve = list(zip(recall.tolist(), precision.tolist()))
    return accuracy, ap, pr_curve


def ced_curve(per_sample_errors, thresholds):
    """Cumulative error distribution: fraction of samples at or below each
    threshold.  Thresholds are sorted so the curve is non-decreasing."""
    errors = np.asarray(per_sample_errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("no sample errors to summarize")
    out = []
    for t in np.sort(np.asarray(thresholds, dtype=np.float64).ravel()):
        out.append((float(t), float(np.mean(errors <= t))))
    return out


@dataclass(frozen=True)
class CompareConfig:
    """Settings for the cross-validated strategy comparison."""

    strategies: tuple = STRATEGIES
    fold_count: int = 5
    validation_fraction: float = 0.2
    pose_noise_deg: float = 25.0
    cluster_centers: tuple | None = None
    rng_seed: int = 0
    train: RecTrainConfig = field(default_factory=RecTrainConfig)

    def validate(self):
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(
                    "unknown strategy %r; valid: %s" % (s, ", ".join(STRATEGIES))
                )
        if len(self.strategies) == 0:
            raise ValueError("at least one strategy required")
        if self.fold_count < 2:
            raise ValueError("fold_count must be at least 2")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.pose_noise_deg < 0:
            raise ValueError("pose_noise_deg must be nonnegative")
        self.train.validate()


def fold_assignment(sample_count: int, fold_count: int, seed: int) -> np.ndarray:
    """Deterministic fold index per sample; each sample lands in exactly one
    fold and fold sizes differ by at most one."""
    perm = np.random.default_rng(derive_seed(seed, "folds")).permutation(sample_count)
    fold = np.empty(sample_count, dtype=np.int64)
    fold[perm] = np.arange(sample_count) % fold_count
    return fold


def _one_hot_ratings(choice, model_count):
    W = np.zeros((choice.shape[0], model_count))
    W[np.arange(choice.shape[0]), choice] = 1.0
    return W


def _strategy_outputs(
    strategy, dataset, idx, rec_forest, cls_forest, centers, yaw, noise
):
    """(landmarks, confidences) of one strategy on the given sample rows."""
    responses = dataset.responses[idx]
    features = dataset.features[idx]
    if strategy == "fixed-frontal":
        c0 = int(np.argmin(np.abs(centers)))
        choice = np.full(idx.shape[0], c0, dtype=np.int64)
        W = _one_hot_ratings(choice, dataset.model_count)
        lm, conf, _ = blend_prediction(dataset.protocol, responses, features, W, 0.0)
    elif strategy == "noisy-prior":
        yaw_hat = yaw[idx] + noise[idx]
        choice = np.argmin(np.abs(yaw_hat[:, None] - centers[None, :]), axis=1)
        W = _one_hot_ratings(choice, dataset.model_count)
        lm, conf, _ = blend_prediction(dataset.protocol, responses, features, W, 0.0)
    elif strategy == "top-vote":
        lm, conf, _ = predict_top_vote_many(cls_forest, responses, features)
    elif strategy == "posterior-rating":
        lm, conf, _ = predict_posterior_rating_many(cls_forest, responses, features)
    elif strategy == "rec-forest":
        lm, conf, _ = predict_many(rec_forest, responses, features)
    else:
        raise ValueError("unknown strategy %r" % (strategy,))
    return lm, conf


def run_comparison(dataset: ResponseDataset, yaw, cluster_id, config, workers=1):
    """Cross-validated comparison of selection strategies.

    yaw and cluster_id are the generator metadata arrays; yaw feeds the
    noisy-prior baseline and cluster_id labels the classification forest.
    Returns {strategy: EvalReport} with errors pooled over every sample's
    single test-fold appearance.
    """
    config.validate()
    M = dataset.sample_count
    yaw = np.asarray(yaw, dtype=np.float64)
    if yaw.shape != (M,) or not np.all(np.isfinite(yaw)):
        raise ValueError("yaw must be (M,) finite")
    labels_all = derive_labels(dataset, cluster_id)

    needs_centers = {"fixed-frontal", "noisy-prior"} & set(config.strategies)
    centers = None
    if needs_centers:
        if config.cluster_centers is None:
            raise ValueError(
                "cluster_centers required for strategies %s"
                % ", ".join(sorted(needs_centers))
            )
        centers = np.asarray(config.cluster_centers, dtype=np.float64)
        if centers.shape != (dataset.model_count,):
            raise ValueError("cluster_centers must list one center per model")

    fold = fold_assignment(M, config.fold_count, config.rng_seed)
    N = dataset.landmark_count
    err = {s: np.full(M, np.nan) for s in config.strategies}
    conf_pool = {s: np.zeros((M, N)) for s in config.strategies}
    flag_pool = {s: np.zeros((M, N), dtype=bool) for s in config.strategies}

    needs_cls = {"top-vote", "posterior-rating"} & set(config.strategies)
    for f in range(config.fold_count):
        test_idx = np.nonzero(fold == f)[0]
        train_idx = np.nonzero(fold != f)[0]
        val_rng = np.random.default_rng(derive_seed(config.rng_seed, "val", f))
        shuffled = val_rng.permutation(train_idx)
        val_count = max(1, int(round(config.validation_fraction * train_idx.size)))
        if val_count >= train_idx.size:
            raise ValueError("validation slice leaves no training samples")
        val_idx = np.sort(shuffled[:val_count])
        fit_idx = np.sort(shuffled[val_count:])
        fit_ds = dataset.subset(fit_idx)
        fold_seed = derive_seed(config.rng_seed, "train", f)
        fold_train = replace(config.train, rng_seed=fold_seed)

        rec_forest = None
        cls_forest = None
        if "rec-forest" in config.strategies:
            rec_forest = train_forest(fit_ds, fold_train, workers=workers)
        if needs_cls:
            cls_forest = train_class_forest(
                fit_ds, labels_all[fit_idx], fold_train, workers=workers
            )
        noise = np.zeros(M)
        if "noisy-prior" in config.strategies:
            noise_rng = np.random.default_rng(
                derive_seed(config.rng_seed, "noisy-prior", f)
            )
            noise = noise_rng.normal(0.0, config.pose_noise_deg, size=M)

        for strat in config.strategies:
            _, conf_val = _strategy_outputs(
                strat, dataset, val_idx, rec_forest, cls_forest, centers, yaw, noise
            )
            gamma, _ = accuracy_maximizing_threshold(
                conf_val.ravel(), dataset.visible[val_idx].ravel()
            )
            lm, conf = _strategy_outputs(
                strat, dataset, test_idx, rec_forest, cls_forest, centers, yaw, noise
            )
            conf_pool[strat][test_idx] = conf
            flag_pool[strat][test_idx] = conf >= gamma
            for row, m in enumerate(test_idx):
                if dataset.visible[m].any():
                    err[strat][m] = sample_error(
                        lm[row],
                        dataset.ground_truth[m],
                        dataset.visible[m],
                        dataset.normalizer[m],
                    )

    included = dataset.visible.any(axis=1)
    reports = {}
    for strat in config.strategies:
        errors = err[strat][included]
        accuracy, ap, pr = visibility_scores(
            conf_pool[strat].ravel(), flag_pool[strat].ravel(), dataset.visible.ravel()
        )
        thresholds = np.linspace(0.0, float(errors.max()), 51)
        reports[strat] = EvalReport(
            mean_error=float(np.mean(errors)),
            visibility_accuracy=accuracy,
            visibility_ap=ap,
            ced_curve=ced_curve(errors, thresholds),
            pr_curve=pr,
            per_sample_errors=errors,
        )
    return reports


def format_comparison(reports, fmt="table") -> str:
    """Render comparison reports as a text table or machine records.

    Both forms are deterministic functions of the reports (no timing, no
    environment), so fixed-seed runs reproduce them byte for byte.
    """
    order = [s for s in STRATEGIES if s in reports]
    order += sorted(set(reports) - set(order))
    if fmt == "records":
        payload = {"formatVersion": 1, "strategies": {}}
        for s in order:
            r = reports[s]
            payload["strategies"][s] = {
                "meanError": r.mean_error,
                "visibilityAccuracy": r.visibility_accuracy,
                "visibilityAP": r.visibility_ap,
            }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt != "table":
        raise ValueError("format must be 'table' or 'records'")
    width = max(len(s) for s in order)
    lines = ["%-*s  %10s  %12s  %8s" % (width, "strategy", "mean-error", "vis-accuracy", "vis-AP")]
    for s in order:
        r = reports[s]
        ap = "%8.4f" % r.visibility_ap if r.visibility_ap is not None else "%8s" % "-"
        lines.append(
            "%-*s  %10.4f  %12.4f  %s" % (width, s, r.mean_error, r.visibility_accuracy, ap)
        )
    return "\n".join(lines) + "\n"


def curve_lines(curve) -> str:
    """Two-column text rendering of a curve, one point per line."""
    return "".join("%r %r\n" % (float(x), float(y)) for x, y in curve)
