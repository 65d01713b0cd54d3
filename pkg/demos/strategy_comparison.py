"""Cross-validated comparison of model-selection strategies.

Five ways to consume the expert pool, evaluated with 5-fold CV on the
aflw-like-5view preset:

  fixed-frontal     always use the expert nearest yaw 0
  noisy-prior       pick the expert nearest a noisy yaw estimate (25 deg)
  top-vote          classification forest, hard majority vote
  posterior-rating  classification forest, posterior used as a rating
  rec-forest        recommendation forest (rating trees, blended output)

The recommendation forest should post the lowest mean error, and its
visibility AP should beat posterior-rating, which in turn beats top-vote.
"""

import time

from recforest import (
    CompareConfig,
    RecTrainConfig,
    format_comparison,
    generate,
    metadata_arrays,
    preset_config,
    run_comparison,
)

config = preset_config("aflw-like-5view", sample_count=1200, rng_seed=0)
ds, meta = generate(config)
yaw, cluster_id = metadata_arrays(meta)
print("dataset: M=%d C=%d N=%d" % (ds.sample_count, ds.model_count,
                                   ds.landmark_count))

compare = CompareConfig(
    cluster_centers=config.cluster_centers,
    rng_seed=0,
    train=RecTrainConfig(),
)
start = time.perf_counter()
reports = run_comparison(ds, yaw, cluster_id, compare)
print("5-fold comparison in %.1fs\n" % (time.perf_counter() - start))

print(format_comparison(reports))

ours = reports["rec-forest"]
posterior = reports["posterior-rating"]
vote = reports["top-vote"]
print("rec-forest has the lowest mean error: %s" % all(
    ours.mean_error < r.mean_error
    for name, r in reports.items() if name != "rec-forest"
))
print("AP ordering rec-forest >= posterior-rating >= top-vote: %s" % (
    ours.visibility_ap >= posterior.visibility_ap >= vote.visibility_ap
))
