"""
End-to-end tree-cover pipeline.

    composite -> feature stack -> built-up mask -> samples -> 80/20 split
              -> forest -> class map -> holdout evaluation -> area -> render

Every artifact written by :func:`run_pipeline` carries the effective
:class:`PipelineConfig` (JSON header key ``"config"``, or a ``#`` comment in
the PPM), and nothing time-dependent, so re-running with the same inputs
reproduces the files byte for byte.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from canopy.builtmask import CombineMode, MaskLayer, apply_mask, build_mask, save_mask
from canopy.errors import CanopyError, FormatError, PipelineError, RasterIOError, ValidationError
from canopy.evalmetrics import (
    AreaReport,
    EvalReport,
    area_estimate,
    dump_json,
    evaluate_labels,
    render_classmap,
)
from canopy.raster import CANONICAL_BANDS, ClassMap, Raster, apply_cloud_mask, median_composite, save_classmap
from canopy.rforest import (
    Forest,
    LabelSet,
    SampleSet,
    SplitSpec,
    classify_raster,
    extract_samples,
    save_model,
    split_train_validation,
    train_forest,
)
from canopy.spectra import ALIASES, FEATURE_NAMES, INDEX_NAMES, IndexBandRoles, build_feature_stack

DEFAULT_MAX_CLOUD_FRACTION = 0.1


@dataclass
class MaskSettings:
    enabled: bool = True
    veg_threshold: float = 0.2
    ndbi_threshold: float = 0.0
    mode: str = "AND"


@dataclass
class SplitSettings:
    train_fraction: float = 0.8
    stratified: bool = True


@dataclass
class ForestSettings:
    n_trees: int = 100
    mtry: int | None = None
    max_depth: int | None = None
    min_samples_split: int = 2


@dataclass
class PipelineConfig:
    features: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))
    roles: IndexBandRoles = field(default_factory=IndexBandRoles)
    savi_standard: bool = False
    mask: MaskSettings = field(default_factory=MaskSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    forest: ForestSettings = field(default_factory=ForestSettings)
    seed: int = 0

    def __post_init__(self):
        self.features = resolve_features(self.features)
        self.mask.mode = CombineMode(self.mask.mode).value
        SplitSpec(self.split.train_fraction, self.seed, self.split.stratified)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        nested = {"roles": IndexBandRoles, "mask": MaskSettings, "split": SplitSettings, "forest": ForestSettings}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, kind in nested.items():
                if key in d:
                    d[key] = kind(**d[key])
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc

    def merged(self, overrides: dict) -> PipelineConfig:
        """Copy with dotted-key overrides applied, e.g. ``{"forest.n_trees": 10}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            target = d
            *path, leaf = key.split(".")
            for p in path:
                target = target[p]
            if leaf not in target:
                raise ValidationError(f"unknown config key {key!r}")
            target[leaf] = value
        return PipelineConfig.from_dict(d)

    def to_cli_args(self) -> list[str]:
        """Flags that reproduce this config when passed to ``canopy run``."""
        args = ["--features", ",".join(self.features), "--seed", str(self.seed)]
        args += ["--blue", self.roles.blue, "--red", self.roles.red, "--nir", self.roles.nir]
        args += ["--swir1", self.roles.swir1]
        args += ["--savi-standard"] if self.savi_standard else ["--savi-half"]
        args += ["--mask"] if self.mask.enabled else ["--no-mask"]
        args += ["--veg-threshold", repr(self.mask.veg_threshold), "--ndbi-threshold", repr(self.mask.ndbi_threshold)]
        args += ["--mask-mode", self.mask.mode]
        args += ["--train-fraction", repr(self.split.train_fraction)]
        args += ["--stratified"] if self.split.stratified else ["--unstratified"]
        args += ["--n-trees", str(self.forest.n_trees), "--min-samples-split", str(self.forest.min_samples_split)]
        if self.forest.mtry is not None:
            args += ["--mtry", str(self.forest.mtry)]
        if self.forest.max_depth is not None:
            args += ["--max-depth", str(self.forest.max_depth)]
        return args


def load_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise RasterIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: config is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(doc)


BANDS_ONLY = list(CANONICAL_BANDS)
ALL_FEATURES = list(FEATURE_NAMES)

#: The three classifier configurations compared in the evaluation table.
PRESETS = {
    "RF-spectral-bands": {"features": BANDS_ONLY, "mask.enabled": False},
    "RF-spectral-indices": {"features": ALL_FEATURES, "mask.enabled": False},
    "Proposed": {"features": ALL_FEATURES, "mask.enabled": True},
}

#: Feature subsets of the feature-set ablation.
ABLATION_SETS = {
    "bands+NDVI": BANDS_ONLY + ["NDVI"],
    "bands+NDVI+NDWI+NDBI+EVI": BANDS_ONLY + ["NDVI", "NDWI", "NDBI", "EVI"],
    "bands+all-indices": ALL_FEATURES,
}


def resolve_features(names) -> list[str]:
    """Canonicalize a feature subset; order follows the 14-band stack."""
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = []
    for n in names:
        n = n.strip()
        n = ALIASES.get(n.upper(), n)
        if n.upper() in INDEX_NAMES:
            n = n.upper()
        if n not in FEATURE_NAMES:
            raise ValidationError(f"unknown feature {n!r}; expected names from {list(FEATURE_NAMES)}")
        if n in out:
            raise ValidationError(f"feature {n!r} listed twice")
        out.append(n)
    if not out:
        raise ValidationError("feature set must not be empty")
    return [n for n in FEATURE_NAMES if n in out]


@contextlib.contextmanager
def stage(name: str):
    """Re-raise failures as :class:`PipelineError` tagged with the stage name."""
    try:
        yield
    except PipelineError:
        raise
    except (CanopyError, ValueError, OSError) as exc:
        raise PipelineError(name, str(exc)) from exc


# --------------------------------------------------------------------------
# Compositing
# --------------------------------------------------------------------------


@dataclass
class CompositeSummary:
    n_input: int
    used: list[int]
    rejected: list[tuple[int, float]]

    def to_dict(self) -> dict:
        return {"n_input": self.n_input, "used": self.used, "rejected": [list(r) for r in self.rejected]}


def composite_observations(
    observations, max_cloud_fraction: float = DEFAULT_MAX_CLOUD_FRACTION
) -> tuple[Raster, CompositeSummary]:
    """Drop observations cloudier than ``max_cloud_fraction``, mask clouds, take the median."""
    observations = list(observations)
    used, rejected, masked = [], [], []
    for i, (obs, cmask) in enumerate(observations):
        frac = cmask.fraction
        if frac > max_cloud_fraction:
            rejected.append((i, frac))
            continue
        used.append(i)
        masked.append(apply_cloud_mask(obs, cmask))
    summary = CompositeSummary(len(observations), used, rejected)
    if not masked:
        raise PipelineError(
            "composite",
            f"all {len(observations)} observations rejected (cloud fraction > {max_cloud_fraction}): "
            + ", ".join(f"#{i}={f:.3f}" for i, f in rejected),
        )
    with stage("composite"):
        return median_composite(masked), summary


# --------------------------------------------------------------------------
# Full run
# --------------------------------------------------------------------------


@dataclass
class PreparedData:
    stack: Raster
    mask: MaskLayer | None
    samples: SampleSet
    train: SampleSet
    validation: SampleSet


@dataclass
class RunResult:
    config: PipelineConfig
    forest: Forest
    classmap: ClassMap
    mask: MaskLayer | None
    report: EvalReport
    area: AreaReport
    n_train: int
    n_validation: int
    n_skipped: int
    outputs: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "split": {"n_train": self.n_train, "n_validation": self.n_validation, "n_skipped": self.n_skipped},
            "evaluation": self.report.to_dict(),
            "area": self.area.to_dict(),
        }


def prepare(config: PipelineConfig, composite: Raster, labels: LabelSet) -> PreparedData:
    """Feature stack, optional mask, sample extraction and split (shared by run and ablate)."""
    with stage("features"):
        stack = build_feature_stack(composite, config.roles, savi_standard=config.savi_standard)
    mask = None
    if config.mask.enabled:
        with stage("mask"):
            mask = build_mask(stack, config.mask.veg_threshold, config.mask.ndbi_threshold, config.mask.mode)
            stack = apply_mask(stack, mask)
    with stage("samples"):
        samples = extract_samples(stack, labels)
    with stage("split"):
        spec = SplitSpec(config.split.train_fraction, config.seed, config.split.stratified)
        train, validation = split_train_validation(samples, spec)
    return PreparedData(stack, mask, samples, train, validation)


def _columns(s: SampleSet, names) -> SampleSet:
    idx = [s.feature_names.index(n) for n in names]
    return SampleSet(s.X[:, idx], s.y, s.locations, list(names), s.n_skipped)


def fit_and_evaluate(config: PipelineConfig, data: PreparedData, n_jobs: int = 1) -> RunResult:
    feats = config.features
    with stage("train"):
        fs = config.forest
        forest = train_forest(
            _columns(data.train, feats),
            n_trees=fs.n_trees,
            mtry=fs.mtry,
            max_depth=fs.max_depth,
            min_samples_split=fs.min_samples_split,
            seed=config.seed,
            n_jobs=n_jobs,
        )
    with stage("classify"):
        cmap = classify_raster(forest, data.stack.select(feats), data.mask, n_jobs=n_jobs)
    with stage("evaluate"):
        report = evaluate_labels(data.validation.labels(), cmap)
        report.n_masked_skipped += data.samples.n_skipped
    with stage("area"):
        area = area_estimate(cmap)
    return RunResult(
        config, forest, cmap, data.mask, report, area, len(data.train), len(data.validation), data.samples.n_skipped
    )


def run_pipeline(
    config: PipelineConfig,
    composite: Raster,
    labels: LabelSet,
    out_dir=None,
    n_jobs: int = 1,
) -> RunResult:
    """Run every stage; with ``out_dir`` also write model, class map, mask, report and render."""
    result = fit_and_evaluate(config, prepare(config, composite, labels), n_jobs=n_jobs)
    if out_dir is not None:
        with stage("write"):
            result.outputs = write_outputs(result, Path(out_dir))
    return result


def provenance(config: PipelineConfig) -> dict:
    return {"config": config.to_dict()}


def write_outputs(result: RunResult, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(result.config)
    paths = {
        "model": out / "model.json",
        "classmap": out / "classmap.msr",
        "report": out / "report.json",
        "render": out / "classmap.ppm",
    }
    save_model(result.forest, paths["model"], extra=prov)
    cmap = ClassMap(result.classmap.classes, result.classmap.pixel_size_m, result.classmap.origin, prov)
    save_classmap(cmap, paths["classmap"])
    paths["report"].write_text(dump_json(result.summary()))
    render_classmap(result.classmap, paths["render"], comment="config " + json.dumps(prov["config"], separators=(",", ":")))
    if result.mask is not None:
        paths["mask"] = out / "mask.msr"
        save_mask(
            result.mask,
            paths["mask"],
            pixel_size_m=result.classmap.pixel_size_m,
            origin=result.classmap.origin,
            metadata=prov,
        )
    return {k: str(v) for k, v in paths.items()}


# --------------------------------------------------------------------------
# Comparisons
# --------------------------------------------------------------------------


def _row(name: str, r: RunResult) -> dict:
    return {
        "model": name,
        "features": r.config.features,
        "masking": r.config.mask.enabled,
        "acres": r.area.tree_area_acres,
        "accuracy": r.report.overall_accuracy,
        "kappa": r.report.kappa,
        "n_validation": r.n_validation,
    }


def ablate(config: PipelineConfig, composite: Raster, labels: LabelSet, feature_sets=None, n_jobs: int = 1) -> list[dict]:
    """One evaluation row per named feature subset, all sharing one mask, split and seed."""
    feature_sets = ABLATION_SETS if feature_sets is None else feature_sets
    if not feature_sets:
        raise ValidationError("ablation needs at least one feature set")
    resolved = {name: resolve_features(names) for name, names in feature_sets.items()}
    data = prepare(config, composite, labels)
    return [_row(name, fit_and_evaluate(replace(config, features=feats), data, n_jobs)) for name, feats in resolved.items()]


def compare_presets(config: PipelineConfig, composite: Raster, labels: LabelSet, presets=None, n_jobs: int = 1) -> list[dict]:
    """Rows for the bands-only / bands+indices / masked configurations."""
    presets = PRESETS if presets is None else presets
    rows = []
    for name, overrides in presets.items():
        cfg = config.merged(overrides)
        rows.append(_row(name, run_pipeline(cfg, composite, labels, n_jobs=n_jobs)))
    return rows
