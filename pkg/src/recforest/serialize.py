"""Forest persistence.

One JSON document per forest: format version, forest kind, gamma, the pool
protocol masks, and the trees as nested split/leaf nodes.  Floats are
written with repr (shortest round-trip), so save -> load -> predict is
bit-identical to the in-memory forest.  Writes are atomic: the file appears
complete or not at all.
"""

import json

import numpy as np

from .classforest import ClassForest, ClassLeaf
from .data import ModelProtocol, SchemaError, _atomic_write_text
from .forest import Leaf, RecForest, Split, SplitParams

FOREST_FORMAT_VERSION = 1

_KIND_TO_KEY = {"recommendation": "rating", "classification": "posterior"}


def _node_to_obj(node, rating_key):
    if isinstance(node, Split):
        return {
            "type": "split",
            "featureIndex": int(node.params.feature_index),
            "threshold": float(node.params.threshold),
            "gain": float(node.gain),
            "left": _node_to_obj(node.left, rating_key),
            "right": _node_to_obj(node.right, rating_key),
        }
    vec = node.rating if rating_key == "rating" else node.posterior
    return {
        "type": "leaf",
        rating_key: [float(v) for v in vec],
        "sampleCount": int(node.sample_count),
    }


def save_forest(forest, path) -> None:
    """Write a recommendation or classification forest to a JSON file."""
    if isinstance(forest, RecForest):
        kind = "recommendation"
    elif isinstance(forest, ClassForest):
        kind = "classification"
    else:
        raise TypeError("expected RecForest or ClassForest, got %r" % type(forest))
    key = _KIND_TO_KEY[kind]
    payload = {
        "formatVersion": FOREST_FORMAT_VERSION,
        "kind": kind,
        "gamma": float(forest.gamma),
        "masks": forest.protocol.masks.astype(int).tolist(),
        "trees": [_node_to_obj(t, key) for t in forest.trees],
    }
    _atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def _require(cond, message):
    if not cond:
        raise SchemaError(message)


def _node_from_obj(obj, rating_key, feature_count, model_count):
    _require(isinstance(obj, dict), "tree node must be an object")
    kind = obj.get("type")
    if kind == "split":
        fi = obj.get("featureIndex")
        _require(isinstance(fi, int) and 0 <= fi < feature_count,
                 "split featureIndex out of range")
        tau = obj.get("threshold")
        _require(isinstance(tau, (int, float)) and np.isfinite(tau),
                 "split threshold must be finite")
        gain = obj.get("gain")
        _require(isinstance(gain, (int, float)) and np.isfinite(gain),
                 "split gain must be finite")
        _require("left" in obj and "right" in obj, "split missing a child")
        return Split(
            params=SplitParams(feature_index=fi, threshold=float(tau)),
            gain=float(gain),
            left=_node_from_obj(obj["left"], rating_key, feature_count, model_count),
            right=_node_from_obj(obj["right"], rating_key, feature_count, model_count),
        )
    if kind == "leaf":
        vec = obj.get(rating_key)
        _require(
            isinstance(vec, list) and len(vec) == model_count,
            "leaf %s must list one weight per model" % rating_key,
        )
        count = obj.get("sampleCount")
        _require(isinstance(count, int) and count >= 1,
                 "leaf sampleCount must be a positive integer")
        try:
            arr = np.asarray(vec, dtype=np.float64)
            if rating_key == "rating":
                return Leaf(rating=arr, sample_count=count)
            return ClassLeaf(posterior=arr, sample_count=count)
        except (TypeError, ValueError) as exc:
            raise SchemaError("invalid leaf %s: %s" % (rating_key, exc))
    raise SchemaError("tree node type must be 'split' or 'leaf'")


def load_forest(path):
    """Read a forest file back; returns RecForest or ClassForest by kind."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("unparseable forest file: %s" % exc)
    _require(isinstance(payload, dict), "forest file must hold an object")
    _require(
        payload.get("formatVersion") == FOREST_FORMAT_VERSION,
        "unsupported forest formatVersion",
    )
    kind = payload.get("kind")
    _require(kind in _KIND_TO_KEY, "forest kind must be recommendation or classification")
    gamma = payload.get("gamma")
    _require(
        isinstance(gamma, (int, float)) and 0.0 <= gamma <= 1.0,
        "gamma must be in [0, 1]",
    )
    masks = payload.get("masks")
    _require(isinstance(masks, list) and masks, "masks must be a nonempty list")
    try:
        protocol = ModelProtocol(np.asarray(masks))
    except (TypeError, ValueError) as exc:
        raise SchemaError("invalid protocol masks: %s" % exc)
    trees_obj = payload.get("trees")
    _require(isinstance(trees_obj, list) and trees_obj, "trees must be a nonempty list")
    key = _KIND_TO_KEY[kind]
    trees = [
        _node_from_obj(t, key, protocol.feature_count, protocol.model_count)
        for t in trees_obj
    ]
    try:
        if kind == "recommendation":
            return RecForest(trees=trees, protocol=protocol, gamma=float(gamma))
        return ClassForest(trees=trees, protocol=protocol, gamma=float(gamma))
    except ValueError as exc:
        raise SchemaError(str(exc))
