"""Built-up / sparse-vegetation exclusion mask.

A pixel is *low vegetation* when both EVI and NDVI are at or below
``veg_threshold`` and *built-up* when NDBI is strictly above
``ndbi_threshold``. In ``AND`` mode (default) a pixel is excluded when it is
both; ``OR`` mode excludes either. Pixels with nodata in any of the three
indices are always excluded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from canopy.errors import FormatError, ValidationError
from canopy.raster import BandInfo, Raster, load_raster, save_raster

DEFAULT_VEG_THRESHOLD = 0.2
DEFAULT_NDBI_THRESHOLD = 0.0


class CombineMode(str, enum.Enum):
    AND = "AND"
    OR = "OR"


@dataclass
class MaskLayer:
    excluded: np.ndarray
    veg_threshold: float = DEFAULT_VEG_THRESHOLD
    ndbi_threshold: float = DEFAULT_NDBI_THRESHOLD
    mode: CombineMode = CombineMode.AND

    def __post_init__(self):
        self.excluded = np.asarray(self.excluded, dtype=bool)
        self.mode = CombineMode(self.mode)
        if self.excluded.ndim != 2:
            raise ValidationError("mask must be 2-D")
        if not (math.isfinite(self.veg_threshold) and math.isfinite(self.ndbi_threshold)):
            raise ValidationError("mask thresholds must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.excluded.shape

    @property
    def width(self) -> int:
        return self.excluded.shape[1]

    @property
    def height(self) -> int:
        return self.excluded.shape[0]

    @property
    def provenance(self) -> dict:
        return {
            "veg_threshold": self.veg_threshold,
            "ndbi_threshold": self.ndbi_threshold,
            "combine_mode": self.mode.value,
        }

    def __eq__(self, other):
        if not isinstance(other, MaskLayer):
            return NotImplemented
        return np.array_equal(self.excluded, other.excluded) and self.provenance == other.provenance


def build_mask(
    features: Raster,
    veg_threshold: float = DEFAULT_VEG_THRESHOLD,
    ndbi_threshold: float = DEFAULT_NDBI_THRESHOLD,
    mode: CombineMode | str = CombineMode.AND,
) -> MaskLayer:
    mode = CombineMode(mode)
    ndvi = features.band("NDVI")
    evi = features.band("EVI")
    ndbi = features.band("NDBI")
    valid = features.valid("NDVI") & features.valid("EVI") & features.valid("NDBI")
    # thresholds compared at the float32 storage precision of the index bands,
    # so an index stored as 0.2 sits exactly on a 0.2 threshold
    veg = np.float32(veg_threshold)
    low_veg = (evi <= veg) & (ndvi <= veg)
    built = ndbi > np.float32(ndbi_threshold)
    hit = (low_veg & built) if mode is CombineMode.AND else (low_veg | built)
    return MaskLayer(hit | ~valid, veg_threshold, ndbi_threshold, mode)


def apply_mask(r: Raster, m: MaskLayer) -> Raster:
    """Set excluded pixels to nodata in every band."""
    if m.shape != r.shape:
        raise ValidationError(f"mask shape {m.shape} does not match raster shape {r.shape}")
    data = r.data.copy()
    data[:, m.excluded] = r.nodata
    return r._like(data, r.bands)


def save_mask(m: MaskLayer, path, pixel_size_m: float = 10.0, origin=(0.0, 0.0), metadata: dict | None = None) -> None:
    meta = {"mask_provenance": m.provenance, **(metadata or {})}
    r = Raster(
        m.excluded.astype(np.float32),
        [BandInfo("MASK", "1 = excluded, 0 = retained")],
        pixel_size_m=pixel_size_m,
        origin=origin,
        metadata=meta,
    )
    save_raster(r, path)


def load_mask(path) -> MaskLayer:
    r = load_raster(path)
    if r.band_names != ["MASK"]:
        raise FormatError(f"{path}: mask must have exactly one band named MASK, got {r.band_names}")
    prov = r.metadata.get("mask_provenance")
    if not isinstance(prov, dict):
        raise FormatError(f"{path}: missing mask_provenance header")
    try:
        return MaskLayer(
            r.data[0] == 1.0,
            veg_threshold=float(prov["veg_threshold"]),
            ndbi_threshold=float(prov["ndbi_threshold"]),
            mode=prov["combine_mode"],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad mask_provenance: {exc}") from exc
