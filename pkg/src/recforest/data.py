"""Core domain types: model pool protocol, response dataset, predictions.

Conventions used throughout the library:

* a landmark is a length-2 float64 array `(x, y)` in shape-space units;
* `responses` has shape (M, C, N, 2): every pool model emits the full set of
  N landmarks for every sample, including landmarks its own protocol marks
  invisible;
* `ground_truth` has shape (M, N, 2) and is NaN wherever the landmark is not
  in the visible set -- those entries are sentinels and must never enter a
  computation;
* `visible` has shape (M, N) and is the dense boolean form of the visible
  pair set;
* `features` has shape (M, F) where F is the total number of
  (model, protocol-visible landmark) slots.

Datasets and protocols are immutable after construction and safe to share
across workers.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

RATING_ATOL = 1e-9


class SchemaError(ValueError):
    """A file or in-memory structure violates the dataset/forest schema."""


def rating_vector(values) -> np.ndarray:
    """Validate and normalize a model rating vector.

    Entries may undershoot zero by at most 1e-9 (numerical slack from the
    solver); they are clamped to 0.  The sum must be within 1e-9 of 1.
    Returns a fresh float64 array.
    """
    w = np.asarray(values, dtype=np.float64).copy()
    if w.ndim != 1 or w.size == 0:
        raise ValueError("rating vector must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)):
        raise ValueError("rating vector has non-finite entries")
    if np.any(w < -RATING_ATOL):
        raise ValueError("rating vector entry below -1e-9: %r" % (w.min(),))
    np.clip(w, 0.0, None, out=w)
    total = w.sum()
    if abs(total - 1.0) > RATING_ATOL:
        raise ValueError("rating vector sums to %r, expected 1" % (total,))
    return w


class ModelProtocol:
    """Visibility protocol of a model pool.

    `masks[c, n]` is 1 when model c declares landmark n visible.  The
    feature vector has one slot per (c, n) pair with mask 1, laid out
    model-major with ascending landmark index inside each model, so each
    model's score block is contiguous.
    """

    def __init__(self, masks):
        masks = np.asarray(masks)
        if masks.ndim != 2:
            raise SchemaError("masks must be a (C, N) array")
        if not np.all((masks == 0) | (masks == 1)):
            raise SchemaError("masks must be binary")
        masks = masks.astype(bool)
        if masks.shape[0] == 0 or masks.shape[1] == 0:
            raise SchemaError("masks must have at least one model and landmark")
        if not masks.any(axis=1).all():
            raise SchemaError("every model must have at least one visible landmark")
        self.masks = masks
        self.model_count, self.landmark_count = masks.shape
        # slot_grid[c, n] = feature index, or -1 where mask is 0
        slot_grid = np.full(masks.shape, -1, dtype=np.int64)
        slot_grid[masks] = np.arange(int(masks.sum()))
        self.slot_grid = slot_grid
        pairs_c, pairs_n = np.nonzero(masks)
        self.slot_pairs = np.stack([pairs_c, pairs_n], axis=1)
        self.feature_count = int(masks.sum())
        for a in (self.masks, self.slot_grid, self.slot_pairs):
            a.setflags(write=False)

    def feature_index(self, c: int, n: int) -> int:
        """Feature slot of model c's score for landmark n.

        Rejects pairs the protocol marks invisible.
        """
        if not (0 <= c < self.model_count and 0 <= n < self.landmark_count):
            raise IndexError("model/landmark index out of range: (%d, %d)" % (c, n))
        slot = self.slot_grid[c, n]
        if slot < 0:
            raise ValueError(
                "landmark %d is not visible in model %d's protocol" % (n, c)
            )
        return int(slot)

    def feature_pair(self, f: int) -> tuple[int, int]:
        """Inverse of feature_index: slot f -> (model, landmark)."""
        if not 0 <= f < self.feature_count:
            raise IndexError("feature index out of range: %d" % f)
        c, n = self.slot_pairs[f]
        return int(c), int(n)

    def __eq__(self, other):
        return isinstance(other, ModelProtocol) and np.array_equal(
            self.masks, other.masks
        )


@dataclass
class ResponseDataset:
    """Model pool responses, ground truth, and recommendation features.

    `normalizer[m]` is the per-sample error scale (shape-space height of the
    sample); landmark errors are reported as percentages of it.
    """

    protocol: ModelProtocol
    responses: np.ndarray      # (M, C, N, 2)
    ground_truth: np.ndarray   # (M, N, 2); NaN outside the visible set
    visible: np.ndarray        # (M, N) bool
    features: np.ndarray       # (M, F)
    normalizer: np.ndarray     # (M,)

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=np.float64)
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.normalizer = np.asarray(self.normalizer, dtype=np.float64)
        self._validate()
        for a in (
            self.responses,
            self.ground_truth,
            self.visible,
            self.features,
            self.normalizer,
        ):
            a.setflags(write=False)

    def _validate(self):
        C = self.protocol.model_count
        N = self.protocol.landmark_count
        F = self.protocol.feature_count
        if self.responses.ndim != 4 or self.responses.shape[1:] != (C, N, 2):
            raise SchemaError("responses shape mismatch: %r" % (self.responses.shape,))
        M = self.responses.shape[0]
        if self.ground_truth.shape != (M, N, 2):
            raise SchemaError(
                "ground truth shape mismatch: %r" % (self.ground_truth.shape,)
            )
        if self.visible.shape != (M, N):
            raise SchemaError("visibility shape mismatch: %r" % (self.visible.shape,))
        if self.features.shape != (M, F):
            raise SchemaError("features shape mismatch: %r" % (self.features.shape,))
        if self.normalizer.shape != (M,):
            raise SchemaError(
                "normalizer shape mismatch: %r" % (self.normalizer.shape,)
            )
        if not np.all(np.isfinite(self.responses)):
            raise SchemaError("non-finite value in responses")
        if not np.all(np.isfinite(self.ground_truth[self.visible])):
            raise SchemaError("non-finite ground truth at a visible landmark")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("non-finite value in features")
        if not np.all(np.isfinite(self.normalizer)) or np.any(self.normalizer <= 0):
            raise SchemaError("normalizer must be positive and finite")

    @property
    def sample_count(self) -> int:
        return self.responses.shape[0]

    @property
    def model_count(self) -> int:
        return self.protocol.model_count

    @property
    def landmark_count(self) -> int:
        return self.protocol.landmark_count

    @property
    def feature_count(self) -> int:
        return self.protocol.feature_count

    def subset(self, indices) -> "ResponseDataset":
        """New dataset restricted to the given sample indices (copying rows)."""
        idx = np.asarray(indices, dtype=np.int64)
        return ResponseDataset(
            protocol=self.protocol,
            responses=self.responses[idx],
            ground_truth=self.ground_truth[idx],
            visible=self.visible[idx],
            features=self.features[idx],
            normalizer=self.normalizer[idx],
        )


@dataclass
class Prediction:
    """Blended landmark estimate plus per-landmark visibility."""

    landmarks: np.ndarray              # (N, 2)
    visibility_confidence: np.ndarray  # (N,), clamped to [0, 1]
    visibility_flag: np.ndarray        # (N,) bool; True iff confidence >= gamma

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        self.visibility_confidence = np.asarray(
            self.visibility_confidence, dtype=np.float64
        )
        self.visibility_flag = np.asarray(self.visibility_flag, dtype=bool)


# ---------------------------------------------------------------------------
# Dataset file format (versioned JSON; NaN literals mark invisible ground truth)
# ---------------------------------------------------------------------------

DATASET_FORMAT_VERSION = 1


def _atomic_write_text(path, text: str):
    """Write text to `path` via a temp file so output is never partial."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_dataset(dataset: ResponseDataset, path):
    """Serialize a dataset to a single JSON document.

    Floats round-trip exactly (shortest decimal repr); ground truth outside
    the visible set is written as NaN.
    """
    M = dataset.sample_count
    gt = dataset.ground_truth.copy()
    gt[~dataset.visible] = np.nan
    samples = []
    for m in range(M):
        samples.append(
            {
                "responses": dataset.responses[m].tolist(),
                "groundTruth": gt[m].tolist(),
                "visibilitySet": np.nonzero(dataset.visible[m])[0].tolist(),
                "features": dataset.features[m].tolist(),
                "normalizer": float(dataset.normalizer[m]),
            }
        )
    doc = {
        "formatVersion": DATASET_FORMAT_VERSION,
        "sampleCount": M,
        "modelCount": dataset.model_count,
        "landmarkCount": dataset.landmark_count,
        "featureCount": dataset.feature_count,
        "masks": dataset.protocol.masks.astype(int).tolist(),
        "samples": samples,
    }
    _atomic_write_text(path, json.dumps(doc))


def _require(cond, message):
    if not cond:
        raise SchemaError(message)


def load_dataset(path) -> ResponseDataset:
    """Load and validate a dataset file, naming the first violated invariant."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError("unparseable dataset file: %s" % exc) from exc
    _require(isinstance(doc, dict), "dataset document must be an object")
    _require(doc.get("formatVersion") == DATASET_FORMAT_VERSION,
             "unsupported formatVersion: %r" % (doc.get("formatVersion"),))
    for key in ("sampleCount", "modelCount", "landmarkCount", "featureCount",
                "masks", "samples"):
        _require(key in doc, "missing dataset field: %s" % key)
    M, C, N, F = (int(doc[k]) for k in
                  ("sampleCount", "modelCount", "landmarkCount", "featureCount"))
    masks = np.asarray(doc["masks"])
    _require(masks.shape == (C, N), "masks shape does not match header C, N")
    try:
        protocol = ModelProtocol(masks)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    _require(protocol.feature_count == F,
             "featureCount header disagrees with masks: %d != %d"
             % (F, protocol.feature_count))
    _require(len(doc["samples"]) == M,
             "sampleCount header disagrees with record count: %d != %d"
             % (M, len(doc["samples"])))

    responses = np.empty((M, C, N, 2))
    ground_truth = np.full((M, N, 2), np.nan)
    visible = np.zeros((M, N), dtype=bool)
    features = np.empty((M, F))
    normalizer = np.empty(M)
    for m, rec in enumerate(doc["samples"]):
        _require(isinstance(rec, dict), "sample %d is not an object" % m)
        resp = np.asarray(rec.get("responses"), dtype=np.float64)
        _require(resp.shape == (C, N, 2),
                 "sample %d responses shape mismatch" % m)
        _require(bool(np.all(np.isfinite(resp))),
                 "sample %d has a non-finite response" % m)
        gt = np.asarray(rec.get("groundTruth"), dtype=np.float64)
        _require(gt.shape == (N, 2), "sample %d ground truth shape mismatch" % m)
        vis_list = rec.get("visibilitySet")
        _require(isinstance(vis_list, list), "sample %d missing visibilitySet" % m)
        for n in vis_list:
            _require(isinstance(n, int) and 0 <= n < N,
                     "sample %d: visibility index out of range: %r" % (m, n))
        vis = np.zeros(N, dtype=bool)
        vis[vis_list] = True
        _require(bool(np.all(np.isfinite(gt[vis]))),
                 "sample %d has non-finite ground truth at a visible landmark" % m)
        feat = np.asarray(rec.get("features"), dtype=np.float64)
        _require(feat.shape == (F,), "sample %d features shape mismatch" % m)
        _require(bool(np.all(np.isfinite(feat))),
                 "sample %d has a non-finite feature score" % m)
        norm = rec.get("normalizer")
        _require(isinstance(norm, (int, float)) and np.isfinite(norm) and norm > 0,
                 "sample %d normalizer must be positive: %r" % (m, norm))
        responses[m] = resp
        ground_truth[m] = gt
        visible[m] = vis
        features[m] = feat
        normalizer[m] = norm
    return ResponseDataset(
        protocol=protocol,
        responses=responses,
        ground_truth=ground_truth,
        visible=visible,
        features=features,
        normalizer=normalizer,
    )


# ---------------------------------------------------------------------------
# Latent metadata sidecar (yaw + cluster id per sample, from the generator)
# ---------------------------------------------------------------------------

def save_metadata(yaw, cluster_id, path, cluster_centers=None):
    yaw = np.asarray(yaw, dtype=np.float64)
    cluster_id = np.asarray(cluster_id, dtype=np.int64)
    if yaw.shape != cluster_id.shape or yaw.ndim != 1:
        raise ValueError("yaw and cluster_id must be matching 1-D arrays")
    doc = {
        "formatVersion": DATASET_FORMAT_VERSION,
        "yaw": yaw.tolist(),
        "clusterId": cluster_id.tolist(),
    }
    if cluster_centers is not None:
        doc["clusterCenters"] = [float(c) for c in cluster_centers]
    _atomic_write_text(path, json.dumps(doc))


def load_metadata(path):
    """Returns (yaw, cluster_id, cluster_centers-or-None) arrays."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError("unparseable metadata file: %s" % exc) from exc
    _require(isinstance(doc, dict), "metadata document must be an object")
    _require(doc.get("formatVersion") == DATASET_FORMAT_VERSION,
             "unsupported formatVersion: %r" % (doc.get("formatVersion"),))
    yaw = np.asarray(doc.get("yaw"), dtype=np.float64)
    cluster_id = np.asarray(doc.get("clusterId"), dtype=np.int64)
    _require(yaw.ndim == 1 and yaw.shape == cluster_id.shape,
             "metadata arrays malformed")
    centers = doc.get("clusterCenters")
    if centers is not None:
        centers = np.asarray(centers, dtype=np.float64)
        _require(centers.ndim == 1, "clusterCenters malformed")
    return yaw, cluster_id, centers
