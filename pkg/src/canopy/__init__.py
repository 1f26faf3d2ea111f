"""Tree-cover estimation from multispectral rasters.

Median compositing, spectral indices, built-up masking, a numpy random
forest, and accuracy / kappa / area evaluation.
"""

from canopy.builtmask import CombineMode, MaskLayer, apply_mask, build_mask
from canopy.errors import CanopyError, FormatError, PipelineError, RasterIOError, ValidationError
from canopy.evalmetrics import (
    AreaReport,
    ConfusionMatrix,
    EvalReport,
    accuracy_and_kappa,
    area_estimate,
    confusion,
    evaluate,
    render_classmap,
)
from canopy.raster import (
    CANONICAL_BANDS,
    MASKED,
    NON_TREE,
    TREE,
    BandInfo,
    ClassMap,
    CloudMask,
    Raster,
    apply_cloud_mask,
    clip_roi,
    load_raster,
    median_composite,
    save_raster,
    stack_bands,
)
from canopy.pipeline import PipelineConfig, ablate, compare_presets, composite_observations, run_pipeline
from canopy.rforest import (
    Forest,
    LabelSet,
    SampleSet,
    SplitSpec,
    classify_raster,
    dump_model,
    extract_samples,
    load_model,
    predict,
    save_model,
    split_train_validation,
    train_forest,
)
from canopy.scenegen import Material, Region, SceneSpec, generate_scene, sample_labels, urban_scene_spec
from canopy.spectra import FEATURE_NAMES, INDEX_NAMES, IndexBandRoles, build_feature_stack

__version__ = "0.1.0"

__all__ = [
    "ablate",
    "accuracy_and_kappa",
    "apply_cloud_mask",
    "apply_mask",
    "area_estimate",
    "AreaReport",
    "BandInfo",
    "build_feature_stack",
    "build_mask",
    "CANONICAL_BANDS",
    "CanopyError",
    "classify_raster",
    "ClassMap",
    "clip_roi",
    "CloudMask",
    "CombineMode",
    "compare_presets",
    "composite_observations",
    "confusion",
    "ConfusionMatrix",
    "dump_model",
    "EvalReport",
    "evaluate",
    "extract_samples",
    "FEATURE_NAMES",
    "Forest",
    "FormatError",
    "generate_scene",
    "INDEX_NAMES",
    "IndexBandRoles",
    "LabelSet",
    "load_model",
    "load_raster",
    "MASKED",
    "MaskLayer",
    "Material",
    "median_composite",
    "NON_TREE",
    "PipelineConfig",
    "PipelineError",
    "predict",
    "Raster",
    "RasterIOError",
    "Region",
    "render_classmap",
    "run_pipeline",
    "sample_labels",
    "SampleSet",
    "save_model",
    "save_raster",
    "SceneSpec",
    "split_train_validation",
    "SplitSpec",
    "stack_bands",
    "train_forest",
    "TREE",
    "urban_scene_spec",
    "ValidationError",
]
