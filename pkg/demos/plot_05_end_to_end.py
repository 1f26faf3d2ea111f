"""
End to end: three configurations compared
=========================================

Bands only, bands plus indices, and bands plus indices with the built-up
mask, all on one scene with one seed. Outputs go to ``demo_output/``.
"""

from pathlib import Path

from canopy import PipelineConfig, composite_observations, generate_scene, sample_labels, urban_scene_spec
from canopy.evalmetrics import format_table
from canopy.pipeline import ablate, compare_presets, run_pipeline

out = Path("demo_output")
spec = urban_scene_spec(seed=4, n_observations=3, cloud_fraction=0.05)
scene = generate_scene(spec)
composite, _ = composite_observations(scene.observations)
labels = sample_labels(scene.truth, 250, seed=4)
truth_acres = scene.tree_pixels * spec.pixel_size_m**2 * 0.000247105
print(f"ground truth: {truth_acres:.2f} acres of tree cover")

config = PipelineConfig(seed=4)
print(format_table(compare_presets(config, composite, labels)))

# feature-subset ablation, masking on
print(format_table(ablate(config, composite, labels)))

# the full run with artifacts: model, class map, mask, report, PPM
result = run_pipeline(config, composite, labels, out_dir=out)
for name, path in result.outputs.items():
    print(f"{name:9s} {path}")
print("re-run with:", "canopy run COMPOSITE LABELS --out-dir DIR", " ".join(config.to_cli_args()))
