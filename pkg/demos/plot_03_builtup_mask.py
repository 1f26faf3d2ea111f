"""
Masking built-up pixels
=======================

Pixels with low vegetation (EVI and NDVI at or below 0.2) and a positive
NDBI are set aside before classification.
"""

import numpy as np

from canopy import Material, apply_mask, build_feature_stack, build_mask, generate_scene, urban_scene_spec
from canopy.scenegen import MATERIAL_CODES

scene = generate_scene(urban_scene_spec(seed=2, width=128, height=128))
stack = build_feature_stack(scene.observations[0][0])

for mode in ("AND", "OR"):
    m = build_mask(stack, mode=mode)
    print(f"{mode}: {m.excluded.mean():.1%} excluded", m.provenance)
    for mat in Material:
        here = scene.materials == MATERIAL_CODES[mat]
        if here.any():
            print(f"   {mat.value:8s} {m.excluded[here].mean():6.1%}")

# raising the vegetation threshold can only grow the exclusion
sizes = [int(build_mask(stack, veg_threshold=t).excluded.sum()) for t in np.linspace(0, 0.6, 7)]
print("excluded vs veg_threshold:", sizes)

masked = apply_mask(stack, build_mask(stack))
print("valid after masking:", f"{masked.valid().mean():.1%}")
