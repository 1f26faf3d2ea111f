"""
The random forest by itself
===========================

Train on labeled pixels, check the holdout, and confirm that the model is
the same whatever the thread count.
"""

import time

import numpy as np

from canopy import (
    SplitSpec,
    build_feature_stack,
    dump_model,
    extract_samples,
    generate_scene,
    sample_labels,
    split_train_validation,
    train_forest,
    urban_scene_spec,
)

scene = generate_scene(urban_scene_spec(seed=3, width=128, height=128, noise_sigma=0.05, illumination_sigma=0.3))
stack = build_feature_stack(scene.observations[0][0])
samples = extract_samples(stack, sample_labels(scene.truth, 200, seed=3))
train, val = split_train_validation(samples, SplitSpec(0.8, seed=3))
print(len(train), "train /", len(val), "validation")

# 80 holdout labels are a noisy yardstick; the truth map scores every pixel
X_all = stack.data.reshape(stack.data.shape[0], -1).T.astype(np.float64)
y_all = scene.truth.classes.reshape(-1)
for n_trees in (1, 10, 100):
    t0 = time.perf_counter()
    f = train_forest(train, n_trees=n_trees, seed=3)
    acc = (f.predict(val.X) == val.y).mean()
    full = (f.predict(X_all) == y_all).mean()
    print(f"{n_trees:4d} trees: holdout {acc:.3f}, all pixels {full:.3f} ({time.perf_counter() - t0:.2f}s)")

# split features chosen across the forest
counts = np.bincount(np.concatenate([t.feature[t.feature >= 0] for t in f.trees]), minlength=f.n_features)
for name, c in sorted(zip(f.feature_names, counts), key=lambda x: -x[1])[:5]:
    print(f"   {name:5s} {c}")

# per-tree seeds make threads irrelevant to the result
assert dump_model(train_forest(train, n_trees=20, seed=9)) == dump_model(train_forest(train, n_trees=20, seed=9, n_jobs=4))
print("1-thread and 4-thread models are identical")
