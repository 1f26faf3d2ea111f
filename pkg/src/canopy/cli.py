"""``canopy`` command-line interface.

Config precedence: command-line flags override ``--config`` file values,
which override ``--preset`` values, which override built-in defaults.

Exit codes: 0 success, 2 validation error, 3 I/O or format error,
4 pipeline stage error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from canopy.builtmask import apply_mask, build_mask, load_mask, save_mask
from canopy.errors import CanopyError, FormatError, PipelineError, RasterIOError, ValidationError
from canopy.evalmetrics import area_estimate, dump_json, evaluate, evaluate_labels, format_table, render_classmap
from canopy.pipeline import (
    ABLATION_SETS,
    PRESETS,
    PipelineConfig,
    ablate,
    composite_observations,
    load_config,
    resolve_features,
    run_pipeline,
)
from canopy.raster import (
    load_classmap,
    load_cloud_mask,
    load_raster,
    save_classmap,
    save_cloud_mask,
    save_raster,
    stack_bands,
)
from canopy.rforest import (
    LabelSet,
    SplitSpec,
    classify_raster,
    extract_samples,
    load_model,
    save_model,
    split_train_validation,
    train_forest,
)
from canopy.scenegen import generate_scene, load_scene_spec, sample_labels
from canopy.spectra import IndexBandRoles, build_feature_stack, compute_index

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_PIPELINE = 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        cause = exc.__cause__
        if isinstance(cause, (FormatError, RasterIOError, OSError)):
            return EXIT_IO
        if isinstance(cause, ValidationError):
            return EXIT_VALIDATION
        return EXIT_PIPELINE
    if isinstance(exc, (FormatError, RasterIOError, OSError)):
        return EXIT_IO
    return EXIT_VALIDATION


# option name -> dotted config key
_CONFIG_FLAGS = {
    "feature_subset": "features",
    "seed": "seed",
    "blue": "roles.blue",
    "red": "roles.red",
    "nir": "roles.nir",
    "swir1": "roles.swir1",
    "savi_standard": "savi_standard",
    "mask_enabled": "mask.enabled",
    "veg_threshold": "mask.veg_threshold",
    "ndbi_threshold": "mask.ndbi_threshold",
    "mask_mode": "mask.mode",
    "train_fraction": "split.train_fraction",
    "stratified": "split.stratified",
    "n_trees": "forest.n_trees",
    "mtry": "forest.mtry",
    "max_depth": "forest.max_depth",
    "min_samples_split": "forest.min_samples_split",
}


def config_options(f):
    """Attach the pipeline-config flags; the command receives ``config``."""
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file."),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Start from a named configuration."),
        click.option("--features", "feature_subset", help="Comma-separated feature subset, e.g. B2,B3,B4,NDVI."),
        click.option("--seed", type=int, help="Master seed for the split and the forest."),
        click.option("--blue", help="Band used as Blue (default B2)."),
        click.option("--red", help="Band used as Red (default B4)."),
        click.option("--nir", help="Band used as NIR (default B8)."),
        click.option("--swir1", help="Band used as SWIR1 (default B11)."),
        click.option("--savi-standard/--savi-half", default=None, help="SAVI gain 1.5 instead of 0.5."),
        click.option("--mask/--no-mask", "mask_enabled", default=None, help="Enable the built-up mask."),
        click.option("--veg-threshold", type=float, help="EVI/NDVI low-vegetation threshold (default 0.2)."),
        click.option("--ndbi-threshold", type=float, help="NDBI built-up threshold (default 0.0)."),
        click.option("--mask-mode", type=click.Choice(["AND", "OR"]), help="Combine rule (default AND)."),
        click.option("--train-fraction", type=float, help="Training share of the samples (default 0.8)."),
        click.option("--stratified/--unstratified", default=None, help="Stratify the split by class."),
        click.option("--n-trees", type=int, help="Number of trees (default 100)."),
        click.option("--mtry", type=int, help="Features tried per split (default floor(sqrt(n_features)))."),
        click.option("--max-depth", type=int, help="Maximum tree depth (default unlimited)."),
        click.option("--min-samples-split", type=int, help="Minimum node size to split (default 2)."),
    ]
    for opt in reversed(opts):
        f = opt(f)

    @functools.wraps(f)
    def wrapper(*args, config_path=None, preset=None, **kwargs):
        flags = {k: kwargs.pop(k) for k in list(kwargs) if k in _CONFIG_FLAGS}
        config = PipelineConfig()
        if preset:
            config = config.merged(PRESETS[preset])
        if config_path:
            file_cfg = load_config(config_path)
            config = file_cfg if not preset else config.merged(_diff(PipelineConfig(), file_cfg))
        overrides = {_CONFIG_FLAGS[k]: v for k, v in flags.items() if v is not None}
        if "features" in overrides:
            overrides["features"] = resolve_features(overrides["features"])
        config = config.merged(overrides)
        return f(*args, config=config, **kwargs)

    return wrapper


def _diff(base: PipelineConfig, other: PipelineConfig) -> dict:
    out = {}

    def walk(a, b, prefix):
        for k in b:
            if isinstance(b[k], dict):
                walk(a[k], b[k], f"{prefix}{k}.")
            elif a[k] != b[k]:
                out[prefix + k] = b[k]

    walk(base.to_dict(), other.to_dict(), "")
    return out


def _echo_json(doc):
    click.echo(json.dumps(doc, indent=2))


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Tree-cover estimation from multispectral rasters.

    \b
    Config precedence: flags > --config file > --preset > defaults.
    Exit codes: 0 ok, 2 validation error, 3 I/O or format error,
    4 pipeline stage error.
    """


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Scene spec JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--labels-per-class", default=200, show_default=True, help="Labels sampled per class.")
@click.option("--label-seed", type=int, help="Seed for label sampling (default: the scene seed).")
def synth(spec_path, out_dir, labels_per_class, label_seed):
    """Generate a synthetic scene: observations, cloud masks, truth map and labels."""
    spec = load_scene_spec(spec_path)
    scene = generate_scene(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"scene_spec": spec.to_dict()}
    for i, (obs, cmask) in enumerate(scene.observations):
        obs.metadata.update(meta)
        save_raster(obs, out / f"obs_{i:02d}.msr")
        save_cloud_mask(cmask, out / f"cloud_{i:02d}.msr", pixel_size_m=spec.pixel_size_m)
    scene.truth.metadata.update(meta)
    save_classmap(scene.truth, out / "truth.msr")
    labels = sample_labels(scene.truth, labels_per_class, spec.seed if label_seed is None else label_seed)
    labels.save_csv(out / "labels.csv")
    click.echo(f"wrote {len(scene.observations)} observations, truth ({scene.tree_pixels} tree pixels), "
               f"{len(labels)} labels to {out}")


@cli.command()
@click.option("--input", "inputs", nargs=2, multiple=True, required=True, type=click.Path(exists=True, dir_okay=False),
              metavar="OBS MASK", help="Observation raster and its cloud mask (repeatable).")
@click.option("--max-cloud-fraction", default=0.1, show_default=True, help="Reject observations cloudier than this.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output composite MSR.")
def composite(inputs, max_cloud_fraction, out):
    """Cloud-mask observations and write their per-pixel median composite."""
    pairs = [(load_raster(o), load_cloud_mask(m)) for o, m in inputs]
    comp, summary = composite_observations(pairs, max_cloud_fraction)
    comp.metadata["config"] = {
        "max_cloud_fraction": max_cloud_fraction,
        "inputs": [[o, m] for o, m in inputs],
        "used": summary.used,
    }
    save_raster(comp, out)
    click.echo(f"composited {len(summary.used)} of {summary.n_input} observations "
               f"({len(summary.rejected)} rejected) -> {out}")


@cli.command()
@click.argument("raster", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--index", "names", multiple=True, help="Write only these indices (repeatable); default: full 14-band stack.")
@click.option("--blue", default="B2", show_default=True)
@click.option("--red", default="B4", show_default=True)
@click.option("--nir", default="B8", show_default=True)
@click.option("--swir1", default="B11", show_default=True)
@click.option("--savi-standard", is_flag=True, help="SAVI gain 1.5 instead of 0.5.")
def indices(raster, out, names, blue, red, nir, swir1, savi_standard):
    """Compute spectral indices (or the 14-band feature stack) from a composite."""
    r = load_raster(raster)
    roles = IndexBandRoles(blue, red, nir, swir1)
    if names:
        result = stack_bands([compute_index(r, n, roles, savi_standard) for n in names])
    else:
        result = build_feature_stack(r, roles, savi_standard)
    result.metadata["config"] = {"roles": roles.to_dict(), "savi_standard": savi_standard, "source": raster}
    save_raster(result, out)
    click.echo(f"wrote {result.band_names} -> {out}")


def _features_for(path, config: PipelineConfig):
    r = load_raster(path)
    if not {"NDVI", "EVI", "NDBI"} <= set(r.band_names):
        r = build_feature_stack(r, config.roles, config.savi_standard)
    return r


@cli.command()
@click.argument("features", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@config_options
def mask(features, out, config):
    """Build the built-up exclusion mask from a feature stack (or a composite)."""
    r = _features_for(features, config)
    m = build_mask(r, config.mask.veg_threshold, config.mask.ndbi_threshold, config.mask.mode)
    save_mask(m, out, pixel_size_m=r.pixel_size_m, origin=r.origin, metadata={"config": config.to_dict()})
    click.echo(f"excluded {int(m.excluded.sum())} of {m.excluded.size} pixels -> {out}")


@cli.command()
@click.argument("features", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model JSON.")
@click.option("--mask-file", "mask_path", type=click.Path(exists=True, dir_okay=False), help="Mask MSR to apply first.")
@click.option("--holdout-out", type=click.Path(dir_okay=False), help="Write the validation labels here.")
@click.option("--n-jobs", default=1, show_default=True, help="Threads for tree construction.")
@config_options
def train(features, labels, out, mask_path, holdout_out, n_jobs, config):
    """Train a forest on the training share of the labeled samples."""
    r = _features_for(features, config)
    if mask_path:
        r = apply_mask(r, load_mask(mask_path))
    samples = extract_samples(r.select(config.features), LabelSet.load_csv(labels))
    tr, va = split_train_validation(samples, SplitSpec(config.split.train_fraction, config.seed, config.split.stratified))
    fs = config.forest
    forest = train_forest(tr, fs.n_trees, fs.mtry, fs.max_depth, fs.min_samples_split, config.seed, n_jobs=n_jobs)
    save_model(forest, out, extra={"config": config.to_dict()})
    if holdout_out:
        va.labels().save_csv(holdout_out)
    click.echo(f"trained {len(forest.trees)} trees on {len(tr)} samples "
               f"({len(va)} held out, {samples.n_skipped} skipped) -> {out}")


@cli.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("features", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--mask-file", "mask_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--n-jobs", default=1, show_default=True)
def classify(model, features, out, mask_path, n_jobs):
    """Classify every pixel of a feature raster."""
    forest = load_model(model)
    r = load_raster(features)
    if not set(forest.feature_names) <= set(r.band_names):
        r = build_feature_stack(r)
    m = load_mask(mask_path) if mask_path else None
    cmap = classify_raster(forest, r.select(forest.feature_names), m, n_jobs=n_jobs)
    cmap.metadata["config"] = {"model": model, "features": features, "mask": mask_path}
    save_classmap(cmap, out)
    click.echo(f"classified {r.width}x{r.height} pixels -> {out}")


@cli.command(name="evaluate")
@click.argument("classmap", type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), help="Reference labels CSV.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), help="Reference class map MSR.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the report JSON here.")
def evaluate_cmd(classmap, labels, truth, out):
    """Confusion matrix, accuracy and kappa against labels or a truth map."""
    if (labels is None) == (truth is None):
        raise ValidationError("pass exactly one of --labels or --truth")
    cmap = load_classmap(classmap)
    report = evaluate_labels(LabelSet.load_csv(labels), cmap) if labels else evaluate(load_classmap(truth), cmap)
    doc = {"config": {"classmap": classmap, "labels": labels, "truth": truth}, "evaluation": report.to_dict()}
    if out:
        Path(out).write_text(dump_json(doc))
    _echo_json(doc["evaluation"])


@cli.command()
@click.argument("classmap", type=click.Path(exists=True, dir_okay=False))
@click.option("--pixel-size", type=float, help="Override the class map's pixel size (m).")
@click.option("--out", type=click.Path(dir_okay=False))
def area(classmap, pixel_size, out):
    """Tree-cover area of a class map, in m^2 and acres."""
    report = area_estimate(load_classmap(classmap), pixel_size)
    doc = {"config": {"classmap": classmap, "pixel_size_m": pixel_size}, "area": report.to_dict()}
    if out:
        Path(out).write_text(dump_json(doc))
    _echo_json(doc["area"])


@cli.command()
@click.argument("classmap", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output PPM (P6).")
def render(classmap, out):
    """Render a class map: tree green, non-tree white, masked gray."""
    cmap = load_classmap(classmap)
    render_classmap(cmap, out, comment="source " + classmap)
    click.echo(f"rendered -> {out}")


@cli.command()
@click.argument("composite_path", metavar="COMPOSITE", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--n-jobs", default=1, show_default=True, help="Threads; outputs do not depend on it.")
@config_options
def run(composite_path, labels, out_dir, n_jobs, config):
    """Full pipeline: features, mask, split, train, classify, evaluate, area, render."""
    result = run_pipeline(config, load_raster(composite_path), LabelSet.load_csv(labels), out_dir, n_jobs=n_jobs)
    row = {
        "model": "run",
        "acres": result.area.tree_area_acres,
        "accuracy": result.report.overall_accuracy,
        "kappa": result.report.kappa,
    }
    click.echo(format_table([row]), nl=False)
    for name, path in result.outputs.items():
        click.echo(f"{name}: {path}")


@cli.command(name="ablate")
@click.argument("composite_path", metavar="COMPOSITE", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels", type=click.Path(exists=True, dir_okay=False))
@click.option("--feature-set", "sets", multiple=True, metavar="NAME=F1,F2,...",
              help="Named feature subset (repeatable); default: the three standard subsets.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write rows + config as JSON.")
@click.option("--n-jobs", default=1, show_default=True)
@config_options
def ablate_cmd(composite_path, labels, sets, out, n_jobs, config):
    """Compare feature subsets under one mask, split and seed."""
    feature_sets = {}
    for s in sets:
        name, sep, names = s.partition("=")
        if not sep or not name:
            raise ValidationError(f"feature set must look like NAME=F1,F2,... got {s!r}")
        feature_sets[name] = names
    rows = ablate(config, load_raster(composite_path), LabelSet.load_csv(labels), feature_sets or ABLATION_SETS, n_jobs)
    if out:
        Path(out).write_text(dump_json({"config": config.to_dict(), "rows": rows}))
    click.echo(format_table(rows), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="canopy", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (CanopyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
