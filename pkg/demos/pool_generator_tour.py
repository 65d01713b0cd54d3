"""Tour of the synthetic multi-view pool generator.

A fixed 3-D face-like template is rotated to a random yaw and projected to
2-D; landmarks whose surface normal turns away from the camera become
self-occluded.  Each pool model is an expert for one yaw cluster with its
own visibility protocol, and detection scores fire near the true landmark
only where the landmark is actually visible.
"""

import numpy as np

from recforest import generate, metadata_arrays, preset_config

config = preset_config("aflw-like-5view", sample_count=1500, rng_seed=0)
ds, meta = generate(config)
yaw, cluster_id = metadata_arrays(meta)
centers = np.asarray(config.cluster_centers)

print("preset aflw-like-5view: M=%d C=%d N=%d F=%d" % (
    ds.sample_count, ds.model_count, ds.landmark_count, ds.feature_count))

print("\nvisibility protocols (one row per expert, x = visible landmark):")
for c, center in enumerate(centers):
    row = "".join("x" if v else "." for v in ds.protocol.masks[c])
    print("  center %+4.0f  %s  (%d landmarks)" % (
        center, row, ds.protocol.masks[c].sum()))

print("\nsamples per cluster:", np.bincount(cluster_id).tolist())
print("overall visible-landmark fraction: %.3f" % ds.visible.mean())

print("\nresponse error vs distance from each expert's cluster:")
true_shapes = np.stack([s.true_shape for s in meta])
err = np.linalg.norm(ds.responses - true_shapes[:, None], axis=3).mean(axis=2)
bins = [(0, 20), (20, 60), (60, 100), (100, 180)]
header = "  center   " + "".join("  |yaw-c| in [%3d,%3d)" % b for b in bins)
print(header)
for c, center in enumerate(centers):
    dist = np.abs(yaw - center)
    cells = []
    for lo, hi in bins:
        sel = (dist >= lo) & (dist < hi)
        cells.append("      %10s" % ("%.4f" % err[sel, c].mean() if sel.any() else "-"))
    print("  %+4.0f   " % center + "".join(cells))

print("\ndetection scores (mean over slots) for a frontal vs a profile sample:")
frontal = int(np.argmin(np.abs(yaw)))
profile = int(np.argmax(np.abs(yaw)))
pairs = ds.protocol.slot_pairs
for name, m in (("frontal", frontal), ("profile", profile)):
    per_model = [ds.features[m][pairs[:, 0] == c].mean() for c in range(5)]
    print("  %s sample (yaw %+6.1f): %s" % (
        name, yaw[m], "  ".join("%.2f" % v for v in per_model)))
print("  (columns are the five experts from %+.0f to %+.0f)" % (
    centers[0], centers[-1]))
