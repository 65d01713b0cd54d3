"""Quickstart: recover a clean two-cluster pool with a single tree.

The benchmark has two view clusters and one expert model per cluster.
In-cluster responses are exact and detection scores are noise free, so a
correct tree must split the samples by cluster at the root and rate each
side with (almost exactly) the matching indicator vector.
"""

import numpy as np

from recforest import (
    RecTrainConfig,
    aggregate_rating,
    generate,
    metadata_arrays,
    predict_many,
    sample_error,
    train_forest,
    two_cluster_config,
)

ds, meta = generate(two_cluster_config(400))
yaw, cluster_id = metadata_arrays(meta)
print("dataset: M=%d models=%d landmarks=%d features=%d" % (
    ds.sample_count, ds.model_count, ds.landmark_count, ds.feature_count))

forest = train_forest(ds, RecTrainConfig(tree_count=1, max_depth=4, rng_seed=0))
root = forest.trees[0]
print("root split: feature %d <= %.4f (gain %.4f)" % (
    root.params.feature_index, root.params.threshold, root.gain))

go_left = ds.features[:, root.params.feature_index] <= root.params.threshold
print("left side clusters: %s   right side clusters: %s" % (
    sorted(int(c) for c in set(cluster_id[go_left])),
    sorted(int(c) for c in set(cluster_id[~go_left]))))

W = aggregate_rating(forest.trees, ds.features, ds.model_count)
indicators = np.zeros_like(W)
indicators[np.arange(ds.sample_count), cluster_id] = 1.0
print("max |rating - indicator| over all samples: %.2e" % np.abs(W - indicators).max())

landmarks, confidence, flags = predict_many(forest, ds.responses, ds.features)
errors = [
    sample_error(landmarks[m], ds.ground_truth[m], ds.visible[m], ds.normalizer[m])
    for m in range(ds.sample_count)
]
print("mean normalized error: %.2e%%" % np.mean(errors))
print("flag accuracy: %.4f" % np.mean(flags == ds.visible))
