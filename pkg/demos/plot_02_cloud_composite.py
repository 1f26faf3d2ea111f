"""
Cloud screening and median compositing
======================================

Cloudy observations are dropped, the remaining clouds are masked
out, and each pixel takes the median of whatever clear looks are left.
"""

import numpy as np

from canopy import composite_observations, generate_scene, urban_scene_spec

spec = urban_scene_spec(seed=1, width=128, height=128, n_observations=5, cloud_fraction=0.08)
scene = generate_scene(spec)
for i, (_, cmask) in enumerate(scene.observations):
    print(f"observation {i}: {cmask.fraction:.1%} cloudy")

# drop anything above 10% cloud; mask the rest
composite, summary = composite_observations(scene.observations, max_cloud_fraction=0.10)
print("used", summary.used, "rejected", summary.rejected)

# even where one look is clouded the median stays near the surface value
clean = generate_scene(urban_scene_spec(seed=1, width=128, height=128, noise_sigma=0.0))
truth = clean.observations[0][0].data
err = np.abs(composite.data - truth)[composite.data != composite.nodata]
print(f"median |composite - noise-free| = {np.median(err):.4f}")
print("pixels with no clear look:", int((~composite.valid()).sum()))

# a stricter threshold may leave nothing; that surfaces as a PipelineError
try:
    composite_observations(scene.observations, max_cloud_fraction=0.0)
except Exception as exc:
    print(type(exc).__name__, exc)
