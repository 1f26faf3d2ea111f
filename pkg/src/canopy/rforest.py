"""
Random forest classifier written on numpy.

Trees are grown on bootstrap resamples with Gini-impurity splits over a random
subset of ``mtry`` features per node. Each tree draws from its own Philox
stream keyed by ``(seed, tree_index)``, so the fitted forest does not depend
on how tree construction is scheduled across threads.

Split rules, in full:

- candidate thresholds are midpoints between consecutive distinct sorted
  values; samples with ``x <= threshold`` go left
- the split with least weighted Gini impurity wins; ties go to the lower
  feature index, then the lower threshold
- a split is only accepted if it strictly lowers impurity
- a node becomes a leaf when pure, smaller than ``min_samples_split``, at
  ``max_depth``, or when no accepted split exists

Leaves and the forest vote both break ties toward the lower class id.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from canopy.errors import FormatError, RasterIOError, ValidationError
from canopy.raster import MASKED, ClassMap, Raster

FORMAT_VERSION = 1
N_CLASSES = 2


# --------------------------------------------------------------------------
# Samples and labels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    source: tuple[int, int] | None = None


@dataclass
class LabelSet:
    """Labeled pixel locations (``label`` is 0 = non-tree, 1 = tree)."""

    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        self.cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if not (len(self.rows) == len(self.cols) == len(self.labels)):
            raise ValidationError("rows, cols and labels must have equal length")
        bad = ~np.isin(self.labels, np.arange(N_CLASSES))
        if bad.any():
            raise ValidationError(f"labels must be in 0..{N_CLASSES - 1}, got {np.unique(self.labels[bad]).tolist()}")

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip((self.rows, self.cols, self.labels), (other.rows, other.cols, other.labels))
        )

    def save_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["row", "col", "label"])
                w.writerows(zip(self.rows.tolist(), self.cols.tolist(), self.labels.tolist()))
        except OSError as exc:
            raise RasterIOError(f"cannot write labels to {path}: {exc}") from exc

    @classmethod
    def load_csv(cls, path) -> LabelSet:
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is None or [h.strip() for h in header] != ["row", "col", "label"]:
                    raise FormatError(f"{path}: label CSV must start with header row,col,label")
                rows = [r for r in reader if r]
        except OSError as exc:
            raise RasterIOError(f"cannot read labels {path}: {exc}") from exc
        try:
            arr = np.array([[int(v) for v in r] for r in rows], dtype=np.int64).reshape(-1, 3)
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer or ragged label row: {exc}") from exc
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


@dataclass
class SampleSet:
    """Feature matrix ``X`` (n, n_features), labels ``y`` and pixel locations."""

    X: np.ndarray
    y: np.ndarray
    locations: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)
    n_skipped: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValidationError(f"X must be (n, p) matching y; got {self.X.shape} and {self.y.shape}")
        if self.locations is not None:
            self.locations = np.asarray(self.locations, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        for i in range(len(self)):
            src = None if self.locations is None else (int(self.locations[i, 0]), int(self.locations[i, 1]))
            yield Sample(self.X[i], int(self.y[i]), src)

    def subset(self, idx) -> SampleSet:
        idx = np.asarray(idx, dtype=np.int64)
        locs = None if self.locations is None else self.locations[idx]
        return SampleSet(self.X[idx], self.y[idx], locs, list(self.feature_names))

    def labels(self) -> LabelSet:
        if self.locations is None:
            raise ValidationError("sample set has no pixel locations")
        return LabelSet(self.locations[:, 0], self.locations[:, 1], self.y)


def extract_samples(features: Raster, labels: LabelSet) -> SampleSet:
    """Feature vectors at labeled pixels; pixels with any invalid feature are skipped."""
    rows, cols = labels.rows, labels.cols
    out = (rows < 0) | (rows >= features.height) | (cols < 0) | (cols >= features.width)
    if out.any():
        i = int(np.flatnonzero(out)[0])
        raise ValidationError(
            f"label ({rows[i]}, {cols[i]}) outside {features.width}x{features.height} raster"
        )
    X = features.data[:, rows, cols].T.astype(np.float64)
    ok = np.all(np.isfinite(X) & (X != features.nodata), axis=1)
    return SampleSet(
        X[ok],
        labels.labels[ok],
        np.stack([rows[ok], cols[ok]], axis=1),
        features.band_names,
        n_skipped=int((~ok).sum()),
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValidationError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_validation(samples: SampleSet, spec: SplitSpec = SplitSpec()) -> tuple[SampleSet, SampleSet]:
    """Seeded train/validation partition.

    The train partition holds ``round(train_fraction * n)`` samples (half
    rounds up). When stratified, that total is shared among classes by
    largest remainder, so each class keeps its proportion to within one
    sample.
    """
    n = len(samples)
    rng = np.random.default_rng(spec.seed)
    n_train = _round_half_up(spec.train_fraction * n)
    if not spec.stratified:
        train_idx = rng.permutation(n)[:n_train]
    else:
        members = [np.flatnonzero(samples.y == c) for c in range(N_CLASSES)]
        sizes = np.array([len(m) for m in members])
        if (sizes == 0).any():
            raise ValidationError(f"stratified split needs every class present; class sizes {sizes.tolist()}")
        quota = spec.train_fraction * sizes
        alloc = np.floor(quota).astype(np.int64)
        # stable sort on negated remainders keeps lower class ids first on ties
        for c in np.argsort(-(quota - alloc), kind="stable")[: max(n_train - alloc.sum(), 0)]:
            alloc[c] = min(alloc[c] + 1, sizes[c])
        train_idx = np.concatenate([rng.permutation(m)[:k] for m, k in zip(members, alloc)])
    in_train = np.zeros(n, dtype=bool)
    in_train[train_idx] = True
    return samples.subset(np.flatnonzero(in_train)), samples.subset(np.flatnonzero(~in_train))


# --------------------------------------------------------------------------
# Trees
# --------------------------------------------------------------------------


class Tree:
    """A fitted decision tree stored as flat node arrays (preorder, left first).

    ``feature[i] == -1`` marks node ``i`` as a leaf; ``counts[i]`` holds the
    per-class training counts at leaves.
    """

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        # argmax picks the first maximum: ties go to the lower class id
        self.prediction = self.counts.argmax(axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row of ``X`` lands in."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.prediction[self.apply(X)]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"counts": self.counts[i].tolist(), "pred": int(self.prediction[i])}
        return {
            "f": int(self.feature[i]),
            "t": float(self.threshold[i]),
            "l": self.to_dict(int(self.left[i])),
            "r": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, root: dict, n_classes: int = N_CLASSES) -> Tree:
        feature, threshold, left, right, counts = [], [], [], [], []

        def visit(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append([0] * n_classes)
            if "counts" in node:
                c = [int(v) for v in node["counts"]]
                if len(c) != n_classes:
                    raise FormatError(f"leaf has {len(c)} class counts, expected {n_classes}")
                counts[i] = c
            else:
                feature[i] = int(node["f"])
                threshold[i] = float(node["t"])
                left[i] = visit(node["l"])
                right[i] = visit(node["r"])
            return i

        visit(root)
        return cls(feature, threshold, left, right, counts)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return (
            np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold.view(np.uint64), other.threshold.view(np.uint64))
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"Tree(n_nodes={self.n_nodes}, n_leaves={self.n_leaves})"


def gini(counts) -> float:
    """Gini impurity ``1 - sum p_c^2`` of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    return float(1.0 - ((counts / n) ** 2).sum())


def _best_split(Xn: np.ndarray, yn: np.ndarray, counts: np.ndarray, feats, n_classes: int):
    """Best (impurity * n, feature, threshold) over ``feats``, or None."""
    n = len(yn)
    onehot = np.eye(n_classes, dtype=np.int64)
    best = None
    for f in feats:
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        pos = np.flatnonzero(xs[:-1] < xs[1:])
        if pos.size == 0:
            continue
        lc = np.cumsum(onehot[yn[order]], axis=0)[pos]
        rc = counts - lc
        nl = (pos + 1).astype(np.float64)
        nr = n - nl
        imp = (nl - (lc * lc).sum(axis=1) / nl) + (nr - (rc * rc).sum(axis=1) / nr)
        j = int(np.argmin(imp))
        a, b = xs[pos[j]], xs[pos[j] + 1]
        t = (a + b) / 2.0
        if not (a <= t < b):
            t = a
        cand = (float(imp[j]), int(f), float(t))
        if best is None or cand < best:
            best = cand
    return best


def _strictly_better(counts, best_left_counts, best_right_counts) -> bool:
    # exact integer test of sum_child S_c / n_c > S / n, S = sum of squared counts
    n, nl, nr = int(counts.sum()), int(best_left_counts.sum()), int(best_right_counts.sum())
    s = int((counts.astype(object) ** 2).sum())
    sl = int((best_left_counts.astype(object) ** 2).sum())
    sr = int((best_right_counts.astype(object) ** 2).sum())
    return n * (sl * nr + sr * nl) > s * nl * nr


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    mtry: int,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    n_classes: int = N_CLASSES,
) -> Tree:
    """Grow one tree on all rows of ``X`` (no resampling here)."""
    p = X.shape[1]
    feature, threshold, left, right, node_counts = [], [], [], [], []

    # explicit stack instead of recursion; children are pushed right-then-left
    # so nodes come out in preorder
    stack = [(np.arange(len(y)), 0, None, None)]
    while stack:
        idx, depth, parent, side = stack.pop()
        i = len(feature)
        if parent is not None:
            (left if side == "l" else right)[parent] = i
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        yn = y[idx]
        counts = np.bincount(yn, minlength=n_classes)
        node_counts.append(counts)

        n = len(idx)
        if n < min_samples_split or counts.max() == n or (max_depth is not None and depth >= max_depth):
            continue
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
        Xn = X[idx]
        best = _best_split(Xn, yn, counts, feats, n_classes)
        if best is None:
            continue
        _, f, t = best
        go_left = Xn[:, f] <= t
        lc = np.bincount(yn[go_left], minlength=n_classes)
        if not _strictly_better(counts, lc, counts - lc):
            continue
        feature[i] = f
        threshold[i] = t
        stack.append((idx[~go_left], depth + 1, i, "r"))
        stack.append((idx[go_left], depth + 1, i, "l"))

    counts = np.array(node_counts, dtype=np.int64)
    feature = np.array(feature)
    counts[feature >= 0] = 0
    return Tree(feature, threshold, left, right, counts)


# --------------------------------------------------------------------------
# Forests
# --------------------------------------------------------------------------


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Counter-based generator for one tree, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(tree_index)])))


class Forest:
    def __init__(
        self,
        trees,
        n_features: int,
        mtry: int,
        seed: int,
        feature_names=None,
        n_classes: int = N_CLASSES,
        params: dict | None = None,
    ):
        self.trees = list(trees)
        self.n_features = int(n_features)
        self.mtry = int(mtry)
        self.seed = int(seed)
        self.n_classes = int(n_classes)
        self.feature_names = list(feature_names) if feature_names else [f"f{i}" for i in range(self.n_features)]
        self.params = dict(params or {})
        if not self.trees:
            raise ValidationError("a forest needs at least one tree")
        if not 1 <= self.mtry <= self.n_features:
            raise ValidationError(f"mtry must be in [1, {self.n_features}], got {self.mtry}")
        if len(self.feature_names) != self.n_features:
            raise ValidationError("feature_names length must equal n_features")
        for t in self.trees:
            if t.feature.max() >= self.n_features:
                raise ValidationError("tree references a feature index >= n_features")

    def votes(self, X, n_jobs: int = 1) -> np.ndarray:
        """(n, n_classes) vote counts for each row of ``X``."""
        X = self._check(X)
        with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
            preds = list(pool.map(lambda t: t.predict(X), self.trees))
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        for p in preds:
            votes[np.arange(len(X)), p] += 1
        return votes

    def predict(self, X, n_jobs: int = 1) -> np.ndarray:
        # argmax takes the first maximum, so vote ties go to the lower class id
        return self.votes(X, n_jobs).argmax(axis=1)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(f"expected (n, {self.n_features}) features, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ValidationError("feature values must be finite")
        return X

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "n_features": self.n_features,
            "mtry": self.mtry,
            "feature_names": self.feature_names,
            "n_classes": self.n_classes,
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Forest:
        try:
            version = d["format_version"]
            if version != FORMAT_VERSION:
                raise FormatError(f"unsupported model format_version {version}")
            n_classes = int(d["n_classes"])
            trees = [Tree.from_dict(t, n_classes) for t in d["trees"]]
            return cls(
                trees,
                n_features=d["n_features"],
                mtry=d["mtry"],
                seed=d["seed"],
                feature_names=d["feature_names"],
                n_classes=n_classes,
                params=d.get("params"),
            )
        except (FormatError, ValidationError):
            raise
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise FormatError(f"malformed model document: {exc!r}") from exc

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return (
            self.trees == other.trees
            and (self.n_features, self.mtry, self.seed, self.n_classes)
            == (other.n_features, other.mtry, other.seed, other.n_classes)
            and self.feature_names == other.feature_names
        )

    def __repr__(self):
        return f"Forest(n_trees={len(self.trees)}, n_features={self.n_features}, mtry={self.mtry}, seed={self.seed})"


def default_mtry(n_features: int) -> int:
    return max(1, math.isqrt(n_features))


def train_forest(
    train,
    n_trees: int = 100,
    mtry: int | None = None,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    seed: int = 0,
    feature_names=None,
    bootstrap: bool = True,
    n_jobs: int = 1,
) -> Forest:
    """Fit a forest on a :class:`SampleSet` or an ``(X, y)`` pair.

    ``mtry`` defaults to ``floor(sqrt(n_features))``. ``bootstrap=False``
    grows every tree on the full training set (only the feature subsampling
    is random). ``n_jobs`` threads build trees concurrently; the result is
    identical for any value.
    """
    if isinstance(train, SampleSet):
        X, y = train.X, train.y
        feature_names = feature_names or train.feature_names
    else:
        X, y = train
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValidationError(f"training data must be a nonempty (n, p) matrix with n labels, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("training features must be finite")
    if ((y < 0) | (y >= N_CLASSES)).any():
        raise ValidationError(f"labels must be in 0..{N_CLASSES - 1}")
    if len(np.unique(y)) < 2:
        raise ValidationError("training set must contain at least two classes")
    if n_trees < 1:
        raise ValidationError(f"n_trees must be >= 1, got {n_trees}")
    if min_samples_split < 2:
        raise ValidationError(f"min_samples_split must be >= 2, got {min_samples_split}")
    if max_depth is not None and max_depth < 0:
        raise ValidationError(f"max_depth must be >= 0, got {max_depth}")
    n, p = X.shape
    mtry = default_mtry(p) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValidationError(f"mtry must be in [1, {p}], got {mtry}")
    if seed < 0 or seed >= 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer")

    def build(k: int) -> Tree:
        rng = tree_rng(seed, k)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        return grow_tree(X[rows], y[rows], rng, mtry, max_depth, min_samples_split)

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
        trees = list(pool.map(build, range(n_trees)))
    params = {
        "n_trees": n_trees,
        "max_depth": max_depth,
        "min_samples_split": min_samples_split,
        "bootstrap": bootstrap,
        "n_train": n,
    }
    return Forest(trees, p, mtry, seed, feature_names, N_CLASSES, params)


def predict(f: Forest, features) -> int:
    """Majority-vote class for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or len(x) != f.n_features:
        raise ValidationError(f"expected a vector of {f.n_features} features, got shape {x.shape}")
    return int(f.predict(x[np.newaxis])[0])


def classify_raster(f: Forest, features: Raster, mask=None, n_jobs: int = 1) -> ClassMap:
    """Class map over a feature raster; invalid or mask-excluded pixels are ``MASKED``."""
    if features.band_names != f.feature_names:
        raise ValidationError(
            f"raster bands {features.band_names} do not match model features {f.feature_names}"
        )
    keep = features.valid()
    if mask is not None:
        if mask.shape != features.shape:
            raise ValidationError(f"mask shape {mask.shape} does not match raster shape {features.shape}")
        keep &= ~mask.excluded
    classes = np.full(features.shape, MASKED, dtype=np.int8)
    if keep.any():
        X = features.data[:, keep].T.astype(np.float64)
        classes[keep] = f.predict(X, n_jobs=n_jobs)
    return ClassMap(classes, pixel_size_m=features.pixel_size_m, origin=features.origin)


def dump_model(f: Forest, extra: dict | None = None) -> str:
    doc = f.to_dict()
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":"), allow_nan=False)


def save_model(f: Forest, path, extra: dict | None = None) -> None:
    """Write the forest as JSON; ``extra`` adds top-level keys (e.g. provenance)."""
    try:
        Path(path).write_text(dump_model(f, extra) + "\n")
    except OSError as exc:
        raise RasterIOError(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> Forest:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise RasterIOError(f"cannot read model {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: model document must be a JSON object")
    return Forest.from_dict(doc)
