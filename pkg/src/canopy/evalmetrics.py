"""Confusion matrices, accuracy / Cohen's kappa, tree-cover area and class-map rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from canopy.errors import RasterIOError, ValidationError
from canopy.raster import MASKED, TREE, ClassMap

ACRES_PER_M2 = 0.000247105

# PPM colours
TREE_RGB = (0, 160, 0)
NON_TREE_RGB = (255, 255, 255)
MASKED_RGB = (128, 128, 128)


@dataclass
class ConfusionMatrix:
    """``counts[i, j]``: positions with reference class i predicted as j."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValidationError(f"confusion counts must be square, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValidationError("confusion counts must be nonnegative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


def _as_classes(x) -> np.ndarray:
    return np.asarray(x.classes if isinstance(x, ClassMap) else x)


def confusion(reference, predicted, n_classes: int = 2) -> tuple[ConfusionMatrix, int, int]:
    """Count (reference, prediction) pairs.

    ``reference`` and ``predicted`` are class maps or equal-shape integer
    arrays. Positions whose reference is outside ``0..n_classes-1`` (no
    label) are skipped; positions predicted ``MASKED`` are skipped and
    tallied separately.

    Returns ``(matrix, n_unlabeled_skipped, n_masked_skipped)``.
    """
    ref = _as_classes(reference).astype(np.int64)
    pred = _as_classes(predicted).astype(np.int64)
    if ref.shape != pred.shape:
        raise ValidationError(f"reference shape {ref.shape} does not match prediction shape {pred.shape}")
    labeled = (ref >= 0) & (ref < n_classes)
    masked = labeled & (pred == MASKED)
    use = labeled & ~masked
    if ((pred[use] < 0) | (pred[use] >= n_classes)).any():
        raise ValidationError("predictions contain unknown class codes")
    if not use.any():
        raise ValidationError("no positions left to evaluate")
    counts = np.bincount(ref[use] * n_classes + pred[use], minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes)), int((~labeled).sum()), int(masked.sum())


def _agreement(c: ConfusionMatrix) -> tuple[Fraction, Fraction]:
    n = c.total
    if n <= 0:
        raise ValidationError("confusion matrix is empty")
    counts = c.counts.tolist()
    trace = sum(counts[i][i] for i in range(c.k))
    rows = [sum(r) for r in counts]
    cols = [sum(counts[i][j] for i in range(c.k)) for j in range(c.k)]
    p_o = Fraction(trace, n)
    p_e = Fraction(sum(r * q for r, q in zip(rows, cols)), n * n)
    return p_o, p_e


def accuracy_and_kappa(c: ConfusionMatrix) -> tuple[float, float | None]:
    """Overall accuracy and Cohen's kappa (``None`` when chance agreement is 1).

    Evaluated in exact rational arithmetic and rounded once.
    """
    p_o, p_e = _agreement(c)
    if p_e == 1:
        return float(p_o), None
    return float(p_o), float((p_o - p_e) / (1 - p_e))


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    overall_accuracy: float
    kappa: float | None
    n_evaluated: int
    n_masked_skipped: int

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.counts.tolist(),
            "overall_accuracy": self.overall_accuracy,
            "kappa": self.kappa,
            "n_evaluated": self.n_evaluated,
            "n_masked_skipped": self.n_masked_skipped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(
            ConfusionMatrix(d["confusion"]),
            d["overall_accuracy"],
            d["kappa"],
            d["n_evaluated"],
            d["n_masked_skipped"],
        )


def evaluate(reference, predicted, n_classes: int = 2) -> EvalReport:
    c, _, n_masked = confusion(reference, predicted, n_classes)
    acc, kappa = accuracy_and_kappa(c)
    return EvalReport(c, acc, kappa, c.total, n_masked)


def evaluate_labels(labels, cmap: ClassMap) -> EvalReport:
    """Evaluate a class map at labeled pixel locations (a ``LabelSet``)."""
    h, w = cmap.shape
    rows, cols = np.asarray(labels.rows), np.asarray(labels.cols)
    if ((rows < 0) | (rows >= h) | (cols < 0) | (cols >= w)).any():
        raise ValidationError(f"label location outside {w}x{h} class map")
    return evaluate(np.asarray(labels.labels), cmap.classes[rows, cols])


@dataclass
class AreaReport:
    tree_pixels: int
    pixel_area_m2: float
    tree_area_m2: float
    tree_area_acres: float
    roi_pixels: int
    roi_area_acres: float

    def to_dict(self) -> dict:
        return asdict(self)


def area_estimate(cmap: ClassMap | np.ndarray, pixel_size_m: float | None = None) -> AreaReport:
    """Tree-cover area; masked pixels count toward the ROI only."""
    if pixel_size_m is None:
        if not isinstance(cmap, ClassMap):
            raise ValidationError("pixel_size_m is required for a bare class array")
        pixel_size_m = cmap.pixel_size_m
    if not (pixel_size_m > 0):
        raise ValidationError(f"pixel_size_m must be positive, got {pixel_size_m}")
    classes = _as_classes(cmap)
    tree = int((classes == TREE).sum())
    pixel_area = float(pixel_size_m) ** 2
    tree_m2 = tree * pixel_area
    return AreaReport(
        tree_pixels=tree,
        pixel_area_m2=pixel_area,
        tree_area_m2=tree_m2,
        tree_area_acres=tree_m2 * ACRES_PER_M2,
        roi_pixels=int(classes.size),
        roi_area_acres=classes.size * pixel_area * ACRES_PER_M2,
    )


def pixels_for_acres(acres: float, pixel_size_m: float) -> int:
    """Nearest whole pixel count covering ``acres``."""
    return int(round(acres / (ACRES_PER_M2 * pixel_size_m**2)))


def classmap_rgb(cmap: ClassMap | np.ndarray) -> np.ndarray:
    classes = _as_classes(cmap)
    rgb = np.empty(classes.shape + (3,), dtype=np.uint8)
    rgb[...] = NON_TREE_RGB
    rgb[classes == TREE] = TREE_RGB
    rgb[classes == MASKED] = MASKED_RGB
    return rgb


def render_classmap(cmap: ClassMap | np.ndarray, path, comment: str | None = None) -> None:
    """Write a binary PPM (P6). ``comment`` lands in a ``#`` header line."""
    rgb = classmap_rgb(cmap)
    h, w = rgb.shape[:2]
    head = "P6\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{w} {h}\n255\n"
    try:
        with open(path, "wb") as fh:
            fh.write(head.encode("utf-8"))
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise RasterIOError(f"cannot write image to {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Decode a P6 file written by :func:`render_classmap` to an (h, w, 3) array."""
    blob = open(path, "rb").read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end : end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end].decode())
        pos = end
    if tokens[0] != "P6":
        raise ValueError(f"{path}: not a P6 image")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(blob[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def format_table(rows) -> str:
    """Plain-text table; ``rows`` are dicts with model, acres, accuracy, kappa."""
    header = ("Model", "Pred. area (acres)", "Accuracy", "Kappa")
    body = []
    for r in rows:
        kappa = r.get("kappa")
        acres = r.get("acres")
        body.append(
            (
                str(r["model"]),
                "-" if acres is None else f"{acres:.2f}",
                f"{r['accuracy']:.4f}",
                "-" if kappa is None else f"{kappa:.4f}",
            )
        )
    widths = [max(len(header[i]), *(len(b[i]) for b in body)) if body else len(header[i]) for i in range(4)]
    fmt = "  ".join(["{:<%d}" % widths[0]] + ["{:>%d}" % w for w in widths[1:]])
    lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*b) for b in body]
    return "\n".join(lines) + "\n"


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
