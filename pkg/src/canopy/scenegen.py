"""
Deterministic synthetic multispectral scenes with known tree cover.

Each pixel takes the reflectance template of its material, scaled by a
per-pixel illumination factor (fixed across observations, as terrain shading
would be), plus independent Gaussian noise per observation and band. Clouds
are random rectangles painted with a bright flat spectrum and flagged in the
observation's cloud mask.

Material templates (surface reflectance)::

    material   B2     B3     B4     B7     B8     B8A    B11    B12
    TREE       0.030  0.060  0.030  0.380  0.420  0.430  0.180  0.090
    GRASS      0.050  0.090  0.070  0.280  0.300  0.310  0.240  0.150
    BUILTUP    0.140  0.160  0.200  0.210  0.220  0.230  0.320  0.280
    WATER      0.080  0.070  0.050  0.030  0.040  0.030  0.020  0.015
    BARE       0.120  0.160  0.250  0.270  0.280  0.290  0.400  0.330

Noise-free index values::

    material   NDVI    EVI     NDBI
    TREE       0.867   0.709  -0.400
    GRASS      0.622   0.428  -0.111
    BUILTUP    0.048   0.036   0.185
    WATER     -0.111  -0.034  -0.333
    BARE       0.057   0.040   0.176

so with the default mask thresholds (0.2 / 0.0) BUILTUP and BARE are
excluded and TREE, GRASS and WATER retained, each with a margin of at least
0.1 in every index involved.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from canopy.errors import FormatError, RasterIOError, ValidationError
from canopy.raster import (
    CANONICAL_BANDS,
    DEFAULT_PIXEL_SIZE_M,
    NON_TREE,
    TREE,
    ClassMap,
    CloudMask,
    Raster,
)
from canopy.rforest import LabelSet


class Material(str, enum.Enum):
    TREE = "TREE"
    GRASS = "GRASS"
    BUILTUP = "BUILTUP"
    WATER = "WATER"
    BARE = "BARE"


SPECTRA = {
    Material.TREE: (0.030, 0.060, 0.030, 0.380, 0.420, 0.430, 0.180, 0.090),
    Material.GRASS: (0.050, 0.090, 0.070, 0.280, 0.300, 0.310, 0.240, 0.150),
    Material.BUILTUP: (0.140, 0.160, 0.200, 0.210, 0.220, 0.230, 0.320, 0.280),
    Material.WATER: (0.080, 0.070, 0.050, 0.030, 0.040, 0.030, 0.020, 0.015),
    Material.BARE: (0.120, 0.160, 0.250, 0.270, 0.280, 0.290, 0.400, 0.330),
}
CLOUD_SPECTRUM = (0.550, 0.560, 0.580, 0.600, 0.610, 0.610, 0.450, 0.350)
MATERIAL_CODES = {m: i for i, m in enumerate(Material)}

# keeps noisy dark pixels (water) off zero so ratios stay defined
MIN_REFLECTANCE = 1e-4


@dataclass(frozen=True)
class Region:
    """A rectangle ``(x0, y0, w, h)`` or a disk ``(cx, cy, r)`` in pixel coordinates."""

    shape: str
    params: tuple
    material: Material

    def __post_init__(self):
        object.__setattr__(self, "material", Material(self.material))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.shape == "rect" and len(self.params) != 4:
            raise ValidationError("rect region needs (x0, y0, w, h)")
        if self.shape == "disk" and len(self.params) != 3:
            raise ValidationError("disk region needs (cx, cy, r)")
        if self.shape not in ("rect", "disk"):
            raise ValidationError(f"unknown region shape {self.shape!r}")

    def cover(self, height: int, width: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        if self.shape == "rect":
            x0, y0, w, h = self.params
            return (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        cx, cy, r = self.params
        return (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r

    def to_dict(self) -> dict:
        keys = ("x0", "y0", "w", "h") if self.shape == "rect" else ("cx", "cy", "r")
        return {"shape": self.shape, **dict(zip(keys, self.params)), "material": self.material.value}

    @classmethod
    def from_dict(cls, d: dict) -> Region:
        shape = d["shape"]
        keys = ("x0", "y0", "w", "h") if shape == "rect" else ("cx", "cy", "r")
        return cls(shape, tuple(d[k] for k in keys), d["material"])


@dataclass
class SceneSpec:
    width: int
    height: int
    seed: int = 0
    regions: list[Region] = field(default_factory=list)
    background: Material = Material.GRASS
    noise_sigma: float = 0.02
    illumination_sigma: float = 0.1
    n_observations: int = 1
    cloud_fraction: float = 0.0
    pixel_size_m: float = DEFAULT_PIXEL_SIZE_M

    def __post_init__(self):
        self.background = Material(self.background)
        self.regions = [r if isinstance(r, Region) else Region.from_dict(r) for r in self.regions]

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "regions": [r.to_dict() for r in self.regions],
            "background": self.background.value,
            "noise_sigma": self.noise_sigma,
            "illumination_sigma": self.illumination_sigma,
            "n_observations": self.n_observations,
            "cloud_fraction": self.cloud_fraction,
            "pixel_size_m": self.pixel_size_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        try:
            return cls(**d)
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise FormatError(f"bad scene spec: {exc}") from exc


def load_scene_spec(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise RasterIOError(f"cannot read scene spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: scene spec is not valid JSON: {exc}") from exc
    return SceneSpec.from_dict(doc)


@dataclass
class Scene:
    observations: list[tuple[Raster, CloudMask]]
    truth: ClassMap
    materials: np.ndarray

    @property
    def tree_pixels(self) -> int:
        return int((self.truth.classes == TREE).sum())


def material_map(spec: SceneSpec) -> np.ndarray:
    """Per-pixel material codes; later regions paint over earlier ones."""
    codes = np.full((spec.height, spec.width), MATERIAL_CODES[spec.background], dtype=np.int8)
    for region in spec.regions:
        codes[region.cover(spec.height, spec.width)] = MATERIAL_CODES[region.material]
    return codes


def _cloud_flags(rng: np.random.Generator, height: int, width: int, fraction: float) -> np.ndarray:
    flags = np.zeros((height, width), dtype=bool)
    if fraction <= 0:
        return flags
    target = fraction * height * width
    while flags.sum() < target:
        h = int(rng.integers(1, max(2, height // 4) + 1))
        w = int(rng.integers(1, max(2, width // 4) + 1))
        y0 = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(0, width - w + 1))
        flags[y0 : y0 + h, x0 : x0 + w] = True
    return flags


def generate_scene(spec: SceneSpec) -> Scene:
    if spec.width < 1 or spec.height < 1:
        raise ValidationError(f"scene must be at least 1x1, got {spec.width}x{spec.height}")
    if spec.n_observations < 1:
        raise ValidationError("n_observations must be >= 1")
    if not 0.0 <= spec.cloud_fraction < 1.0:
        raise ValidationError(f"cloud_fraction must be in [0, 1), got {spec.cloud_fraction}")
    if spec.noise_sigma < 0 or spec.illumination_sigma < 0:
        raise ValidationError("noise and illumination sigmas must be nonnegative")

    rng = np.random.default_rng(spec.seed)
    codes = material_map(spec)
    table = np.array([SPECTRA[m] for m in Material])  # (materials, bands)
    base = np.moveaxis(table[codes], -1, 0)  # (bands, h, w)
    if spec.illumination_sigma > 0:
        base = base * np.exp(rng.normal(0.0, spec.illumination_sigma, size=codes.shape))

    observations = []
    for _ in range(spec.n_observations):
        noisy = base + rng.normal(0.0, spec.noise_sigma, size=base.shape) if spec.noise_sigma > 0 else base.copy()
        flags = _cloud_flags(rng, spec.height, spec.width, spec.cloud_fraction)
        if flags.any():
            cloud = np.asarray(CLOUD_SPECTRUM)[:, np.newaxis]
            noisy[:, flags] = cloud + rng.normal(0.0, spec.noise_sigma, size=(len(CANONICAL_BANDS), int(flags.sum())))
        noisy = np.maximum(noisy, MIN_REFLECTANCE)
        obs = Raster(noisy, CANONICAL_BANDS, pixel_size_m=spec.pixel_size_m)
        observations.append((obs, CloudMask(flags)))

    truth = np.where(codes == MATERIAL_CODES[Material.TREE], TREE, NON_TREE)
    return Scene(observations, ClassMap(truth, pixel_size_m=spec.pixel_size_m), codes)


def sample_labels(truth: ClassMap, n_per_class: int, seed: int = 0) -> LabelSet:
    """``n_per_class`` distinct random pixels of each class, sorted by location within a class."""
    rng = np.random.default_rng(seed)
    flat = truth.classes.reshape(-1)
    rows, cols, labels = [], [], []
    for c in (NON_TREE, TREE):
        idx = np.flatnonzero(flat == c)
        if len(idx) < n_per_class:
            raise ValidationError(f"class {c} has {len(idx)} pixels, fewer than the {n_per_class} requested")
        pick = np.sort(rng.choice(idx, size=n_per_class, replace=False))
        r, q = np.divmod(pick, truth.shape[1])
        rows.append(r)
        cols.append(q)
        labels.append(np.full(n_per_class, c))
    return LabelSet(np.concatenate(rows), np.concatenate(cols), np.concatenate(labels))


def urban_scene_spec(
    seed: int = 0,
    width: int = 256,
    height: int = 256,
    water: bool = False,
    **overrides,
) -> SceneSpec:
    """A campus-like layout: grass background, buildings, tree clumps and bare lots.

    Region placement is drawn from ``seed``; every other spec field takes
    its default unless passed in ``overrides``.
    """
    rng = np.random.default_rng([seed, 1])
    regions = []
    scale = min(width, height) / 256
    for _ in range(3):
        w, h = rng.integers(20, 50, size=2) * scale
        regions.append(Region("rect", (rng.uniform(0, width - w), rng.uniform(0, height - h), w, h), Material.BARE))
    for _ in range(10):
        w, h = rng.integers(12, 40, size=2) * scale
        regions.append(Region("rect", (rng.uniform(0, width - w), rng.uniform(0, height - h), w, h), Material.BUILTUP))
    if water:
        r = 16 * scale
        regions.append(Region("disk", (rng.uniform(r, width - r), rng.uniform(r, height - r), r), Material.WATER))
    for _ in range(14):
        r = rng.uniform(8, 20) * scale
        regions.append(Region("disk", (rng.uniform(0, width), rng.uniform(0, height), r), Material.TREE))
    return SceneSpec(width=width, height=height, seed=seed, regions=regions, **overrides)
