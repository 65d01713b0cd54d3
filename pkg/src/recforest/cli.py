"""Command line: dataset generation, training, prediction, evaluation,
and the cross-validated strategy comparison.

Option precedence is flags over --config file over preset defaults.  All
randomness flows from each command's --seed through tagged sub-seeds, so
results are byte-reproducible for a fixed seed at any --workers count.
The RECFOREST_WORKERS environment variable sets the default worker count.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .classforest import (
    derive_labels,
    predict_posterior_rating_many,
    predict_top_vote_many,
    train_class_forest,
)
from .data import (
    _atomic_write_text,
    load_dataset,
    load_metadata,
    save_dataset,
    save_metadata,
)
from .forest import (
    RecForest,
    RecTrainConfig,
    accuracy_maximizing_threshold,
    predict_many,
    train_forest,
)
from .metrics import (
    STRATEGIES,
    CompareConfig,
    curve_lines,
    format_comparison,
    run_comparison,
    sample_error,
    visibility_scores,
)
from .seeds import derive_seed
from .serialize import load_forest, save_forest
from .synth import PRESETS, GenConfig, generate, metadata_arrays

WORKERS_ENV = "RECFOREST_WORKERS"

DATASET_FILE = "dataset.json"
METADATA_FILE = "metadata.json"


def _resolve_workers(value):
    if value is None:
        raw = os.environ.get(WORKERS_ENV)
        if raw is None:
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ValueError("%s must be an integer" % WORKERS_ENV)
    if value < 1:
        raise ValueError("workers must be >= 1")
    return value


def _read_config(path, allowed, label):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError("unparseable config file %s: %s" % (path, exc))
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ValueError(
            "unknown config keys for %s: %s" % (label, ", ".join(unknown))
        )
    return doc


def _parse_floats(text, label):
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise ValueError("%s must be comma-separated numbers" % label)


def _merge_dataclass(cls, base, config_doc, args, flag_names):
    merged = dict(base)
    merged.update(config_doc)
    for name in flag_names:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return cls(**merged)


def _load_data_dir(path, need_metadata=False):
    dataset = load_dataset(os.path.join(path, DATASET_FILE))
    meta = None
    meta_path = os.path.join(path, METADATA_FILE)
    if os.path.exists(meta_path):
        meta = load_metadata(meta_path)
    if need_metadata and meta is None:
        raise ValueError("no %s in %s" % (METADATA_FILE, path))
    return dataset, meta


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args):
    field_names = [f.name for f in fields(GenConfig)]
    base = asdict(PRESETS[args.preset])
    doc = _read_config(args.config, field_names, "gen") if args.config else {}
    if args.cluster_centers is not None:
        args.cluster_centers = _parse_floats(args.cluster_centers, "--centers")
    if args.yaw_range is not None:
        args.yaw_range = _parse_floats(args.yaw_range, "--yaw-range")
    config = _merge_dataclass(GenConfig, base, doc, args, field_names)
    config = GenConfig(
        **{
            **asdict(config),
            "cluster_centers": tuple(float(c) for c in config.cluster_centers),
            "yaw_range": tuple(float(v) for v in config.yaw_range),
        }
    )
    if len(config.yaw_range) != 2:
        raise ValueError("yaw_range must be two numbers: lo,hi")
    dataset, metadata = generate(config)
    yaw, cluster_id = metadata_arrays(metadata)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(dataset, os.path.join(args.out, DATASET_FILE))
    save_metadata(
        yaw,
        cluster_id,
        os.path.join(args.out, METADATA_FILE),
        cluster_centers=config.cluster_centers,
    )
    print(
        "M=%d C=%d N=%d F=%d visible-fraction=%.4f"
        % (
            dataset.sample_count,
            dataset.model_count,
            dataset.landmark_count,
            dataset.feature_count,
            float(dataset.visible.mean()),
        )
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_FLAGS = [f.name for f in fields(RecTrainConfig)]


def _add_train_flags(p):
    p.add_argument("--trees", type=int, dest="tree_count")
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--min-samples-leaf", type=int, dest="min_samples_per_leaf")
    p.add_argument("--candidate-features", type=int, dest="candidate_feature_count")
    p.add_argument("--candidate-thresholds", type=int, dest="candidate_threshold_count")
    p.add_argument("--min-gain", type=float, dest="min_gain")
    p.add_argument("--bootstrap", type=float, dest="bootstrap_fraction")


def _train_config(args, doc):
    base = asdict(RecTrainConfig())
    return _merge_dataclass(RecTrainConfig, base, doc, args, _TRAIN_FLAGS)


def _validation_split(sample_count, fraction, seed):
    if not 0.0 < fraction < 1.0:
        raise ValueError("--val must be in (0, 1)")
    rng = np.random.default_rng(derive_seed(seed, "val"))
    perm = rng.permutation(sample_count)
    val_count = max(1, int(round(fraction * sample_count)))
    if val_count >= sample_count:
        raise ValueError("validation slice leaves no training samples")
    return np.sort(perm[val_count:]), np.sort(perm[:val_count])


def cmd_train(args):
    workers = _resolve_workers(args.workers)
    doc = (
        _read_config(args.config, _TRAIN_FLAGS + ["val"], "train")
        if args.config
        else {}
    )
    val_fraction = args.val if args.val is not None else doc.pop("val", 0.2)
    doc.pop("val", None)
    config = _train_config(args, doc)
    dataset, meta = _load_data_dir(args.data)
    fit_idx, val_idx = _validation_split(
        dataset.sample_count, val_fraction, config.rng_seed
    )
    fit_ds = dataset.subset(fit_idx)
    if args.method == "rec":
        forest = train_forest(fit_ds, config, workers=workers)
        _, conf, _ = predict_many(
            forest, dataset.responses[val_idx], dataset.features[val_idx]
        )
    else:
        cluster_id = meta[1] if meta is not None else None
        labels = derive_labels(dataset, cluster_id)
        forest = train_class_forest(fit_ds, labels[fit_idx], config, workers=workers)
        _, conf, _ = predict_posterior_rating_many(
            forest, dataset.responses[val_idx], dataset.features[val_idx]
        )
    gamma, accuracy = accuracy_maximizing_threshold(
        conf.ravel(), dataset.visible[val_idx].ravel()
    )
    forest.gamma = gamma
    save_forest(forest, args.out)
    print(
        "method=%s trees=%d gamma=%r val-visibility-accuracy=%.4f"
        % (args.method, len(forest.trees), gamma, accuracy)
    )
    return 0


# ---------------------------------------------------------------------------
# predict / eval
# ---------------------------------------------------------------------------

def _forest_outputs(forest, dataset, selector):
    if forest.protocol != dataset.protocol:
        raise ValueError("forest protocol does not match dataset protocol")
    if isinstance(forest, RecForest):
        return predict_many(forest, dataset.responses, dataset.features)
    if selector == "top-vote":
        return predict_top_vote_many(forest, dataset.responses, dataset.features)
    return predict_posterior_rating_many(forest, dataset.responses, dataset.features)


def cmd_predict(args):
    forest = load_forest(args.forest)
    dataset, _ = _load_data_dir(args.data)
    landmarks, confidences, flags = _forest_outputs(forest, dataset, args.selector)
    samples = []
    for m in range(dataset.sample_count):
        samples.append(
            {
                "landmarks": [[float(x), float(y)] for x, y in landmarks[m]],
                "confidences": [float(v) for v in confidences[m]],
                "flags": [bool(v) for v in flags[m]],
            }
        )
    payload = {"formatVersion": 1, "sampleCount": dataset.sample_count, "samples": samples}
    _atomic_write_text(args.out, json.dumps(payload, indent=1) + "\n")
    print("wrote %d predictions to %s" % (dataset.sample_count, args.out))
    return 0


def cmd_eval(args):
    forest = load_forest(args.forest)
    dataset, _ = _load_data_dir(args.data)
    landmarks, confidences, flags = _forest_outputs(forest, dataset, args.selector)
    errors = [
        sample_error(
            landmarks[m],
            dataset.ground_truth[m],
            dataset.visible[m],
            dataset.normalizer[m],
        )
        for m in range(dataset.sample_count)
        if dataset.visible[m].any()
    ]
    if not errors:
        raise ValueError("no samples with visible landmarks to evaluate")
    accuracy, ap, _ = visibility_scores(
        confidences.ravel(), flags.ravel(), dataset.visible.ravel()
    )
    mean_error = float(np.mean(errors))
    if args.format == "records":
        text = (
            json.dumps(
                {
                    "formatVersion": 1,
                    "meanError": mean_error,
                    "visibilityAccuracy": accuracy,
                    "visibilityAP": ap,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    else:
        ap_text = "%.4f" % ap if ap is not None else "-"
        text = (
            "mean-error    %.4f\nvis-accuracy  %.4f\nvis-AP        %s\n"
            % (mean_error, accuracy, ap_text)
        )
    sys.stdout.write(text)
    if args.out:
        _atomic_write_text(args.out, text)
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

_COMPARE_KEYS = [
    "strategies",
    "fold_count",
    "validation_fraction",
    "pose_noise_deg",
    "cluster_centers",
    "rng_seed",
    "train",
]


def cmd_compare(args):
    workers = _resolve_workers(args.workers)
    doc = _read_config(args.config, _COMPARE_KEYS, "compare") if args.config else {}
    train_doc = doc.pop("train", {})
    if not isinstance(train_doc, dict):
        raise ValueError("config key 'train' must be an object")
    unknown = sorted(set(train_doc) - set(_TRAIN_FLAGS))
    if unknown:
        raise ValueError("unknown config keys for train: %s" % ", ".join(unknown))
    train_config = _train_config(args, train_doc)

    dataset, meta = _load_data_dir(args.data, need_metadata=True)
    yaw, cluster_id, meta_centers = meta
    if args.cluster_centers is not None:
        centers = _parse_floats(args.cluster_centers, "--centers")
    elif "cluster_centers" in doc:
        centers = tuple(float(c) for c in doc["cluster_centers"])
    elif meta_centers is not None:
        centers = tuple(float(c) for c in meta_centers)
    else:
        centers = None

    if args.strategies is not None:
        strategies = tuple(tok.strip() for tok in args.strategies.split(","))
    elif "strategies" in doc:
        strategies = tuple(doc["strategies"])
    else:
        strategies = STRATEGIES

    config = CompareConfig(
        strategies=strategies,
        fold_count=args.fold_count
        if args.fold_count is not None
        else doc.get("fold_count", 5),
        validation_fraction=args.validation_fraction
        if args.validation_fraction is not None
        else doc.get("validation_fraction", 0.2),
        pose_noise_deg=args.pose_noise_deg
        if args.pose_noise_deg is not None
        else doc.get("pose_noise_deg", 25.0),
        cluster_centers=centers,
        rng_seed=args.rng_seed
        if args.rng_seed is not None
        else doc.get("rng_seed", 0),
        train=train_config,
    )
    reports = run_comparison(dataset, yaw, cluster_id, config, workers=workers)
    text = format_comparison(reports, args.format)
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report_name = "report.json" if args.format == "records" else "report.txt"
        _atomic_write_text(os.path.join(args.out, report_name), text)
        for name, report in reports.items():
            _atomic_write_text(
                os.path.join(args.out, "%s-ced.txt" % name),
                curve_lines(report.ced_curve),
            )
            _atomic_write_text(
                os.path.join(args.out, "%s-pr.txt" % name),
                curve_lines(report.pr_curve),
            )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="recforest",
        description="Model recommendation forests over synthetic multi-view "
        "landmark pools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--preset", default="aflw-like-5view", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON file with generator fields")
    p.add_argument("--m", type=int, dest="sample_count")
    p.add_argument("--n", type=int, dest="landmark_count")
    p.add_argument("--centers", dest="cluster_centers",
                   help="comma-separated cluster centers in degrees")
    p.add_argument("--half-width", type=float, dest="cluster_half_width")
    p.add_argument("--yaw-range", dest="yaw_range", help="lo,hi in degrees")
    p.add_argument("--in-noise", type=float, dest="in_noise")
    p.add_argument("--out-noise-slope", type=float, dest="out_noise_slope")
    p.add_argument("--score-sharpness", type=float, dest="score_sharpness")
    p.add_argument("--score-noise", type=float, dest="score_noise")
    p.add_argument("--occlusion-rate", type=float, dest="occlusion_rate")
    p.add_argument("--in-cluster-only", action="store_true", default=None,
                   dest="in_cluster_only")
    p.add_argument("--seed", type=int, dest="rng_seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a forest and calibrate gamma")
    p.add_argument("--data", required=True, help="directory from `gen`")
    p.add_argument("--out", required=True, help="forest file to write")
    p.add_argument("--method", choices=("rec", "class"), default="rec")
    p.add_argument("--val", type=float, default=None,
                   help="fraction held out for gamma calibration (default 0.2)")
    p.add_argument("--config", help="JSON file with training fields")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, dest="rng_seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-sample predictions")
    p.add_argument("--forest", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="record file to write")
    p.add_argument("--selector", choices=("top-vote", "posterior-rating"),
                   default="top-vote",
                   help="prediction rule for classification forests")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a forest against ground truth")
    p.add_argument("--forest", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--selector", choices=("top-vote", "posterior-rating"),
                   default="top-vote",
                   help="prediction rule for classification forests")
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="cross-validated strategy comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for report and curve files")
    p.add_argument("--strategies", help="comma list, default all five")
    p.add_argument("--folds", type=int, dest="fold_count")
    p.add_argument("--val", type=float, dest="validation_fraction")
    p.add_argument("--pose-noise", type=float, dest="pose_noise_deg")
    p.add_argument("--centers", dest="cluster_centers",
                   help="override cluster centers for the prior baselines")
    p.add_argument("--config", help="JSON file with comparison fields")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, dest="rng_seed")
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
