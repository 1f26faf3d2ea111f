"""Spectral indices and the 14-feature classifier stack.

::

    NDVI = (NIR - Red) / (NIR + Red)
    EVI  = 2.5 (NIR - Red) / (NIR + 6 Red - 7.5 Blue + 1)
    LAI  = 3.618 EVI - 0.118
    SAVI = 0.5 (NIR - Red) / (NIR + Red + 0.5)
    NDWI = (NIR - SWIR1) / (NIR + SWIR1)
    NDBI = (SWIR1 - NIR) / (SWIR1 + NIR)

Default roles: Blue = B2, Red = B4, NIR = B8, SWIR1 = B11.

SAVI uses a leading factor of 0.5 by default; pass ``standard=True`` for the
conventional ``(1 + L) = 1.5``. NDMI has the same formula as NDWI here and is
accepted as an alias.

Every index is a per-pixel map evaluated in float64 and stored as float32.
Nodata in any input band, or a zero denominator, yields nodata. Values are
not clamped.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from canopy.errors import ValidationError
from canopy.raster import CANONICAL_BANDS, BandInfo, Raster, stack_bands

INDEX_NAMES = ("NDVI", "EVI", "LAI", "SAVI", "NDWI", "NDBI")
FEATURE_NAMES = CANONICAL_BANDS + INDEX_NAMES
ALIASES = {"NDMI": "NDWI"}

LAI_SLOPE = 3.618
LAI_INTERCEPT = -0.118
SAVI_L = 0.5

_DESCRIPTIONS = {
    "NDVI": "Normalized Difference Vegetation Index",
    "EVI": "Enhanced Vegetation Index",
    "LAI": "Leaf Area Index (affine in EVI)",
    "SAVI": "Soil Adjusted Vegetation Index",
    "NDWI": "Normalized Difference Water/Moisture Index",
    "NDBI": "Normalized Difference Built-up Index",
}


@dataclass(frozen=True)
class IndexBandRoles:
    """Which raster bands play the Blue / Red / NIR / SWIR1 roles."""

    blue: str = "B2"
    red: str = "B4"
    nir: str = "B8"
    swir1: str = "B11"

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_ROLES = IndexBandRoles()


def canonical_index_name(name: str) -> str:
    name = ALIASES.get(name.upper(), name.upper())
    if name not in INDEX_NAMES:
        raise ValidationError(f"unknown spectral index {name!r}; expected one of {INDEX_NAMES}")
    return name


def _inputs(r: Raster, *names):
    valid = np.ones(r.shape, dtype=bool)
    planes = []
    for n in names:
        valid &= r.valid(n)
        planes.append(r.band(n).astype(np.float64))
    return planes, valid


def _finish(r: Raster, name: str, num, den, valid) -> Raster:
    good = valid & (den != 0)
    out = np.full(r.shape, r.nodata, dtype=np.float64)
    np.divide(num, den, out=out, where=good)
    # guard against overflow to inf on tiny denominators
    out[good & ~np.isfinite(out)] = r.nodata
    return r._like(out.astype(np.float32)[np.newaxis], [BandInfo(name, _DESCRIPTIONS[name])])


def _normalized_difference(r: Raster, a: str, b: str, name: str) -> Raster:
    (pa, pb), valid = _inputs(r, a, b)
    return _finish(r, name, pa - pb, pa + pb, valid)


def ndvi(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES) -> Raster:
    return _normalized_difference(r, roles.nir, roles.red, "NDVI")


def evi(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES) -> Raster:
    (nir, red, blue), valid = _inputs(r, roles.nir, roles.red, roles.blue)
    return _finish(r, "EVI", 2.5 * (nir - red), nir + 6.0 * red - 7.5 * blue + 1.0, valid)


def lai(evi_band: Raster) -> Raster:
    """Leaf area index from a raster holding an ``EVI`` band."""
    (e,), valid = _inputs(evi_band, "EVI")
    out = np.where(valid, LAI_SLOPE * e + LAI_INTERCEPT, evi_band.nodata)
    return evi_band._like(out.astype(np.float32)[np.newaxis], [BandInfo("LAI", _DESCRIPTIONS["LAI"])])


def savi(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES, standard: bool = False) -> Raster:
    (nir, red), valid = _inputs(r, roles.nir, roles.red)
    gain = 1.0 + SAVI_L if standard else SAVI_L
    return _finish(r, "SAVI", gain * (nir - red), nir + red + SAVI_L, valid)


def ndwi(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES) -> Raster:
    return _normalized_difference(r, roles.nir, roles.swir1, "NDWI")


ndmi = ndwi


def ndbi(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES) -> Raster:
    return _normalized_difference(r, roles.swir1, roles.nir, "NDBI")


def compute_index(r: Raster, name: str, roles: IndexBandRoles = DEFAULT_ROLES, savi_standard: bool = False) -> Raster:
    """Compute one index by name (aliases such as NDMI accepted)."""
    name = canonical_index_name(name)
    if name == "LAI":
        return lai(r if "EVI" in r.band_names else evi(r, roles))
    if name == "SAVI":
        return savi(r, roles, standard=savi_standard)
    return {"NDVI": ndvi, "EVI": evi, "NDWI": ndwi, "NDBI": ndbi}[name](r, roles)


def build_feature_stack(r: Raster, roles: IndexBandRoles = DEFAULT_ROLES, savi_standard: bool = False) -> Raster:
    """Eight canonical bands followed by the six indices (14 bands).

    A pixel with nodata in any canonical band is nodata in every derived band.
    """
    missing = [b for b in CANONICAL_BANDS if b not in r.band_names]
    if missing:
        raise ValidationError(f"feature stack needs bands {list(CANONICAL_BANDS)}; missing {missing}")
    bands = r.select(CANONICAL_BANDS)
    e = evi(bands, roles)
    indices = [
        ndvi(bands, roles),
        e,
        lai(e),
        savi(bands, roles, standard=savi_standard),
        ndwi(bands, roles),
        ndbi(bands, roles),
    ]
    out = stack_bands([bands, *indices])
    invalid = ~bands.valid()
    out.data[len(CANONICAL_BANDS) :, invalid] = out.nodata
    return out
