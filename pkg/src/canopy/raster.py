"""
Raster data model, cloud masking, temporal median compositing and MSR file I/O.

A :class:`Raster` is a stack of co-registered float32 band planes laid out as
``data[band, row, col]``. Invalid pixels carry the ``nodata`` sentinel.
Rasters live in a local affine frame (top-left ``origin`` in meters, square
pixels of ``pixel_size_m``); there is no projection handling.

MSR container layout (all little-endian)::

    b"MSRASTR1"                 8-byte magic
    uint32 N                    header length in bytes
    N bytes of UTF-8 JSON       {width, height, pixel_size_m, origin_x,
                                 origin_y, nodata, bands: [{name, description}],
                                 ...extra keys}
    float32[bands][height][width]
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from canopy.errors import FormatError, RasterIOError, ValidationError

MAGIC = b"MSRASTR1"
DEFAULT_NODATA = -9999.0
DEFAULT_PIXEL_SIZE_M = 10.0

#: Sentinel-2 bands used as classifier features, in feature-stack order.
CANONICAL_BANDS = ("B2", "B3", "B4", "B7", "B8", "B8A", "B11", "B12")

BAND_DESCRIPTIONS = {
    "B2": "Blue",
    "B3": "Green",
    "B4": "Red",
    "B7": "Red Edge 3",
    "B8": "NIR",
    "B8A": "Red Edge 4",
    "B11": "SWIR 1",
    "B12": "SWIR 2",
}

# Class codes shared by class maps, labels and evaluation.
NON_TREE = 0
TREE = 1
MASKED = -1

_CORE_KEYS = ("width", "height", "pixel_size_m", "origin_x", "origin_y", "nodata", "bands")


@dataclass(frozen=True)
class BandInfo:
    name: str
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValidationError("band name must be nonempty")


class Raster:
    """Multi-band grid of reflectance (or derived index) values.

    Parameters
    ----------
    data : array-like, shape (bands, height, width)
        Band-planar values; coerced to float32. A 2-D array is treated as a
        single band.
    bands : sequence of BandInfo or str
        One entry per plane, names unique.
    nodata : float
        Sentinel marking invalid pixels.
    pixel_size_m : float
        Ground sampling distance, meters per pixel side.
    origin : (float, float)
        Top-left corner (x, y) in meters.
    metadata : dict, optional
        Extra JSON-serializable header fields carried through file I/O
        (e.g. provenance).
    """

    def __init__(
        self,
        data,
        bands,
        nodata: float = DEFAULT_NODATA,
        pixel_size_m: float = DEFAULT_PIXEL_SIZE_M,
        origin: tuple[float, float] = (0.0, 0.0),
        metadata: dict | None = None,
    ):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise ValidationError(f"raster data must be 3-D (bands, height, width), got {arr.ndim}-D")
        bands = [b if isinstance(b, BandInfo) else BandInfo(str(b), BAND_DESCRIPTIONS.get(str(b), "")) for b in bands]
        if len(bands) == 0:
            raise ValidationError("raster needs at least one band")
        if len(bands) != arr.shape[0]:
            raise ValidationError(f"{len(bands)} band descriptors for {arr.shape[0]} data planes")
        names = [b.name for b in bands]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate band names: {names}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValidationError(f"raster must be at least 1x1, got {arr.shape[2]}x{arr.shape[1]}")
        if not (np.isfinite(pixel_size_m) and pixel_size_m > 0):
            raise ValidationError(f"pixel_size_m must be positive, got {pixel_size_m}")
        self.data = arr
        self.bands = bands
        self.nodata = float(np.float32(nodata))
        self.pixel_size_m = float(pixel_size_m)
        self.origin = (float(origin[0]), float(origin[1]))
        self.metadata = dict(metadata or {})

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width)"""
        return self.data.shape[1], self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def band_names(self) -> list[str]:
        return [b.name for b in self.bands]

    def band_index(self, name: str) -> int:
        try:
            return self.band_names.index(name)
        except ValueError:
            raise ValidationError(f"band {name!r} not found; raster has {self.band_names}") from None

    def band(self, name: str) -> np.ndarray:
        """Return the plane for ``name`` (a view, not a copy)."""
        return self.data[self.band_index(name)]

    def valid(self, name: str | None = None) -> np.ndarray:
        """Boolean (height, width) array, True where the band (or every band) is valid."""
        planes = self.data if name is None else self.band(name)[np.newaxis]
        return np.all((planes != self.nodata) & np.isfinite(planes), axis=0)

    def select(self, names) -> Raster:
        """New raster holding only ``names``, in that order."""
        idx = [self.band_index(n) for n in names]
        if not idx:
            raise ValidationError("cannot select an empty band list")
        return self._like(self.data[idx], [self.bands[i] for i in idx])

    def _like(self, data, bands, origin=None) -> Raster:
        return Raster(
            data,
            bands,
            nodata=self.nodata,
            pixel_size_m=self.pixel_size_m,
            origin=self.origin if origin is None else origin,
        )

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.bands == other.bands
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
            and self.nodata == other.nodata
            and self.pixel_size_m == other.pixel_size_m
            and self.origin == other.origin
            and self.metadata == other.metadata
        )

    def __repr__(self):
        return f"Raster({self.width}x{self.height}, bands={self.band_names}, pixel_size_m={self.pixel_size_m})"


@dataclass(eq=False)
class CloudMask:
    """Per-pixel cloud flags for one observation (True = cloudy/invalid)."""

    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 2 or min(self.flags.shape) < 1:
            raise ValidationError(f"cloud mask must be a nonempty 2-D array, got shape {self.flags.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def fraction(self) -> float:
        """Fraction of the frame flagged cloudy."""
        return float(self.flags.mean())

    def __eq__(self, other):
        if not isinstance(other, CloudMask):
            return NotImplemented
        return np.array_equal(self.flags, other.flags)


@dataclass
class ClassMap:
    """Per-pixel class codes: ``TREE``, ``NON_TREE`` or ``MASKED``."""

    classes: np.ndarray
    pixel_size_m: float = DEFAULT_PIXEL_SIZE_M
    origin: tuple[float, float] = (0.0, 0.0)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int8)
        if self.classes.ndim != 2 or min(self.classes.shape) < 1:
            raise ValidationError(f"class map must be a nonempty 2-D array, got shape {self.classes.shape}")
        if not (self.pixel_size_m > 0):
            raise ValidationError(f"pixel_size_m must be positive, got {self.pixel_size_m}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def __eq__(self, other):
        if not isinstance(other, ClassMap):
            return NotImplemented
        return (
            np.array_equal(self.classes, other.classes)
            and self.pixel_size_m == other.pixel_size_m
            and tuple(self.origin) == tuple(other.origin)
            and self.metadata == other.metadata
        )


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------


def _encode_header(r: Raster) -> bytes:
    header = {
        "width": r.width,
        "height": r.height,
        "pixel_size_m": r.pixel_size_m,
        "origin_x": r.origin[0],
        "origin_y": r.origin[1],
        "nodata": r.nodata,
        "bands": [{"name": b.name, "description": b.description} for b in r.bands],
    }
    for key, value in r.metadata.items():
        if key in _CORE_KEYS:
            raise ValidationError(f"metadata key {key!r} collides with a core header field")
        header[key] = value
    return json.dumps(header, separators=(",", ":"), allow_nan=False).encode("utf-8")


def save_raster(r: Raster, path) -> None:
    """Write ``r`` to ``path`` in the MSR container format."""
    header = _encode_header(r)
    payload = r.data.astype("<f4", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise RasterIOError(f"cannot write raster to {path}: {exc}") from exc


def load_raster(path) -> Raster:
    """Read an MSR file written by :func:`save_raster`."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise RasterIOError(f"cannot read raster {path}: {exc}") from exc
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise FormatError(f"{path}: not an MSR raster (bad magic)")
    (n,) = struct.unpack("<I", blob[8:12])
    if 12 + n > len(blob):
        raise FormatError(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(blob[12 : 12 + n].decode("utf-8"))
        width, height = int(header["width"]), int(header["height"])
        bands = [BandInfo(b["name"], b.get("description", "")) for b in header["bands"]]
        nodata = float(header["nodata"])
        pixel_size = float(header["pixel_size_m"])
        origin = (float(header["origin_x"]), float(header["origin_y"]))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    if width < 1 or height < 1 or not bands:
        raise FormatError(f"{path}: header declares an empty raster")
    expected = width * height * len(bands) * 4
    payload = blob[12 + n :]
    if len(payload) < expected:
        raise RasterIOError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected} for {len(bands)} bands)"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(len(bands), height, width).astype(np.float32)
    extra = {k: v for k, v in header.items() if k not in _CORE_KEYS}
    return Raster(data, bands, nodata=nodata, pixel_size_m=pixel_size, origin=origin, metadata=extra)


def save_cloud_mask(mask: CloudMask, path, **raster_kwargs) -> None:
    save_raster(Raster(mask.flags.astype(np.float32), [BandInfo("CLOUD", "1 = cloudy")], **raster_kwargs), path)


def load_cloud_mask(path) -> CloudMask:
    r = load_raster(path)
    if r.band_names != ["CLOUD"]:
        raise FormatError(f"{path}: cloud mask must have exactly one band named CLOUD, got {r.band_names}")
    return CloudMask(r.data[0] == 1.0)


def save_classmap(cmap: ClassMap, path, nodata: float = DEFAULT_NODATA) -> None:
    values = cmap.classes.astype(np.float32)
    values[cmap.classes == MASKED] = nodata
    r = Raster(
        values,
        [BandInfo("CLASS", "0 = non-tree, 1 = tree, nodata = masked")],
        nodata=nodata,
        pixel_size_m=cmap.pixel_size_m,
        origin=cmap.origin,
        metadata=cmap.metadata,
    )
    save_raster(r, path)


def load_classmap(path) -> ClassMap:
    r = load_raster(path)
    if r.band_names != ["CLASS"]:
        raise FormatError(f"{path}: class map must have exactly one band named CLASS, got {r.band_names}")
    plane = r.data[0]
    classes = np.full(plane.shape, MASKED, dtype=np.int8)
    valid = r.valid()
    classes[valid] = plane[valid].astype(np.int8)
    return ClassMap(classes, pixel_size_m=r.pixel_size_m, origin=r.origin, metadata=r.metadata)


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def apply_cloud_mask(obs: Raster, mask: CloudMask) -> Raster:
    """Set every cloudy pixel to nodata in all bands."""
    if mask.shape != obs.shape:
        raise ValidationError(f"cloud mask shape {mask.shape} does not match raster shape {obs.shape}")
    data = obs.data.copy()
    data[:, mask.flags] = obs.nodata
    return obs._like(data, obs.bands)


def median_composite(series) -> Raster:
    """Per-pixel, per-band median over the valid observations in ``series``.

    Nodata observations are ignored. An even number of valid values yields
    the mean of the two middle ones; zero valid values yields nodata.
    """
    series = list(series)
    if not series:
        raise ValidationError("median_composite needs at least one raster")
    first = series[0]
    for r in series[1:]:
        if r.data.shape != first.data.shape or r.band_names != first.band_names:
            raise ValidationError("all rasters in a composite must share dimensions and band list")
        if r.nodata != first.nodata or r.pixel_size_m != first.pixel_size_m:
            raise ValidationError("all rasters in a composite must share nodata and pixel size")

    stack = np.stack([r.data for r in series]).astype(np.float64)
    invalid = (stack == first.nodata) | ~np.isfinite(stack)
    stack[invalid] = np.nan
    # NaN sorts last, so the valid values occupy the first `count` slots.
    stack.sort(axis=0)
    count = (~invalid).sum(axis=0)
    lo = np.maximum(count - 1, 0) // 2
    hi = count // 2
    lo_val = np.take_along_axis(stack, lo[np.newaxis], axis=0)[0]
    hi_val = np.take_along_axis(stack, np.minimum(hi, len(series) - 1)[np.newaxis], axis=0)[0]
    med = np.where(count % 2 == 1, lo_val, (lo_val + hi_val) / 2.0)
    med[count == 0] = first.nodata
    return first._like(med.astype(np.float32), first.bands)


def stack_bands(rasters) -> Raster:
    """Concatenate the bands of ``rasters`` in input order."""
    rasters = list(rasters)
    if not rasters:
        raise ValidationError("stack_bands needs at least one raster")
    first = rasters[0]
    for r in rasters[1:]:
        if r.shape != first.shape:
            raise ValidationError(f"cannot stack rasters of shape {r.shape} and {first.shape}")
    bands = [b for r in rasters for b in r.bands]
    names = [b.name for b in bands]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValidationError(f"duplicate band names across inputs: {dupes}")
    return first._like(np.concatenate([r.data for r in rasters]), bands)


def clip_roi(r: Raster, x0: int, y0: int, w: int, h: int) -> Raster:
    """Sub-window of ``w`` x ``h`` pixels whose top-left pixel is (col ``x0``, row ``y0``)."""
    if w < 1 or h < 1:
        raise ValidationError(f"window must be at least 1x1, got {w}x{h}")
    if x0 < 0 or y0 < 0 or x0 + w > r.width or y0 + h > r.height:
        raise ValidationError(f"window ({x0}, {y0}, {w}, {h}) outside {r.width}x{r.height} raster")
    origin = (r.origin[0] + x0 * r.pixel_size_m, r.origin[1] + y0 * r.pixel_size_m)
    return r._like(r.data[:, y0 : y0 + h, x0 : x0 + w].copy(), r.bands, origin=origin)
