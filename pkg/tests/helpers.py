"""Shared builders for small synthetic fixtures used across test modules."""

import numpy as np

from recforest.data import ModelProtocol, ResponseDataset


def random_dataset(rng, M=12, C=3, N=5, full_cover=False):
    """A small structurally valid dataset with random contents."""
    if full_cover:
        masks = np.ones((C, N), dtype=bool)
    else:
        masks = rng.random((C, N)) < 0.75
        masks[:, 0] = True
    proto = ModelProtocol(masks)
    responses = rng.normal(size=(M, C, N, 2))
    visible = rng.random((M, N)) < 0.8
    visible[:, 0] = True  # every sample keeps at least one visible landmark
    ground_truth = rng.normal(size=(M, N, 2))
    ground_truth[~visible] = np.nan
    features = rng.random((M, proto.feature_count))
    return ResponseDataset(
        protocol=proto,
        responses=responses,
        ground_truth=ground_truth,
        visible=visible,
        features=features,
        normalizer=rng.uniform(0.5, 2.0, size=M),
    )
