import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canopy.builtmask import MaskLayer
from canopy.errors import FormatError, ValidationError
from canopy.raster import MASKED, Raster
from canopy.rforest import (
    Forest,
    LabelSet,
    SampleSet,
    SplitSpec,
    Tree,
    classify_raster,
    extract_samples,
    gini,
    grow_tree,
    load_model,
    predict,
    save_model,
    split_train_validation,
    train_forest,
    tree_rng,
)

ND = -9999.0


def leaf(cls, n_classes=2):
    counts = [0] * n_classes
    counts[cls] = 1
    return Tree([-1], [0.0], [-1], [-1], [counts])


def separable(rng, n=200):
    X = rng.uniform(0, 1, size=(n, 2))
    return X, (X[:, 0] > 0.5).astype(int)


def samples(y, p=3):
    y = np.asarray(y)
    X = np.arange(len(y) * p, dtype=float).reshape(len(y), p)
    locs = np.stack([np.arange(len(y)), np.zeros(len(y), int)], axis=1)
    return SampleSet(X, y, locs, [f"f{i}" for i in range(p)])


# -- extraction ----------------------------------------------------------------


def test_extract_samples():
    data = np.arange(2 * 4 * 5, dtype=np.float32).reshape(2, 4, 5)
    data[0, 0, :3] = ND
    r = Raster(data, ["a", "b"])
    labels = LabelSet(rows=[1, 0, 0, 0, 2, 3, 3, 1, 2, 0], cols=[1, 0, 1, 2, 3, 4, 0, 4, 2, 3], labels=[0, 1] * 5)
    s = extract_samples(r, labels)
    assert len(s) == 7 and s.n_skipped == 3
    assert s.X[0].tolist() == [6.0, 26.0]
    assert s.feature_names == ["a", "b"]
    assert s.locations[0].tolist() == [1, 1]
    with pytest.raises(ValidationError):
        extract_samples(r, LabelSet([4], [0], [1]))
    with pytest.raises(ValidationError):
        extract_samples(r, LabelSet([0], [-1], [1]))


def test_label_csv_round_trip(tmp_path):
    ls = LabelSet([0, 3, 9], [1, 2, 0], [1, 0, 1])
    ls.save_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "row,col,label"
    assert LabelSet.load_csv(tmp_path / "l.csv") == ls
    (tmp_path / "bad.csv").write_text("r,c,l\n1,2,0\n")
    with pytest.raises(FormatError):
        LabelSet.load_csv(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("row,col,label\n1,x,0\n")
    with pytest.raises(FormatError):
        LabelSet.load_csv(tmp_path / "bad2.csv")
    with pytest.raises(ValidationError):
        LabelSet([0], [0], [2])


# -- split -----------------------------------------------------------------------


def test_split_balanced_counts():
    s = samples([0] * 50 + [1] * 50)
    train, val = split_train_validation(s, SplitSpec(0.8, seed=7))
    assert len(train) == 80 and len(val) == 20
    assert np.bincount(train.y).tolist() == [40, 40]
    assert np.bincount(val.y).tolist() == [10, 10]
    assert not set(map(tuple, train.locations)) & set(map(tuple, val.locations))


def test_split_deterministic():
    s = samples([0] * 30 + [1] * 17)
    a = split_train_validation(s, SplitSpec(seed=3))
    b = split_train_validation(s, SplitSpec(seed=3))
    assert a[0].locations.tolist() == b[0].locations.tolist()
    c = split_train_validation(s, SplitSpec(seed=4))
    assert a[0].locations.tolist() != c[0].locations.tolist()


def test_split_small_class():
    s = samples([0] * 5 + [1] * 5)
    train, val = split_train_validation(s, SplitSpec(0.8))
    assert np.bincount(train.y).tolist() == [4, 4]
    assert np.bincount(val.y).tolist() == [1, 1]


def test_split_errors():
    with pytest.raises(ValidationError):
        SplitSpec(1.0)
    with pytest.raises(ValidationError):
        SplitSpec(0.0)
    with pytest.raises(ValidationError):
        split_train_validation(samples([1] * 5), SplitSpec())
    train, val = split_train_validation(samples([1] * 5), SplitSpec(stratified=False))
    assert (len(train), len(val)) == (4, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.floats(0.05, 0.95), st.integers(0, 2**32), st.booleans())
def test_split_properties(n0, n1, frac, seed, stratified):
    s = samples([0] * n0 + [1] * n1)
    train, val = split_train_validation(s, SplitSpec(frac, seed, stratified))
    n = n0 + n1
    assert len(train) + len(val) == n
    assert len(train) == int(np.floor(frac * n + 0.5))
    assert not set(train.locations[:, 0]) & set(val.locations[:, 0])
    if stratified:
        got = np.bincount(train.y, minlength=2)
        assert (np.abs(got - frac * np.array([n0, n1])) <= 1).all()


# -- trees ---------------------------------------------------------------------


def test_gini():
    assert gini([5, 0]) == 0.0
    assert gini([0, 7]) == 0.0
    assert gini([3, 3]) == 0.5


def test_threshold_is_midpoint():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    t = grow_tree(X, np.array([0, 0, 1, 1]), tree_rng(0, 0), 1)
    assert t.n_nodes == 3 and t.feature[0] == 0 and t.threshold[0] == 1.5


def test_no_split_when_no_impurity_decrease():
    # XOR on one copy of each point: no single threshold lowers impurity
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    t = grow_tree(X, np.array([0, 0, 1, 1]), tree_rng(0, 0), 2)
    assert t.n_nodes == 1
    assert t.counts[0].tolist() == [2, 2] and t.prediction[0] == 0


def test_leaves_pure_at_unlimited_depth(rng):
    X, y = separable(rng, 80)
    t = grow_tree(X, y, tree_rng(1, 0), 2)
    leaves = t.counts[t.feature < 0]
    assert all(gini(c) == 0.0 for c in leaves)
    assert (t.predict(X) == y).all()


def test_max_depth_and_min_samples(rng):
    X, y = separable(rng, 80)
    X[:, 0] = rng.permutation(X[:, 0])  # make it noisy
    assert grow_tree(X, y, tree_rng(0, 0), 2, max_depth=0).n_nodes == 1
    assert grow_tree(X, y, tree_rng(0, 0), 2, max_depth=2).depth() <= 2
    assert grow_tree(X, y, tree_rng(0, 0), 2, min_samples_split=1000).n_nodes == 1


def test_tree_dict_round_trip(rng):
    X, y = separable(rng, 60)
    t = grow_tree(X, y, tree_rng(0, 0), 2)
    assert Tree.from_dict(json.loads(json.dumps(t.to_dict()))) == t


# -- forest --------------------------------------------------------------------


def test_separable_training_accuracy(rng):
    X, y = separable(rng)
    f = train_forest((X, y), n_trees=10, seed=1)
    assert (f.predict(X) == y).all()


def test_deterministic_and_thread_independent(rng):
    X, y = separable(rng)
    a = train_forest((X, y), n_trees=12, seed=5)
    b = train_forest((X, y), n_trees=12, seed=5, n_jobs=4)
    assert a == b
    assert a.to_dict() == b.to_dict()
    assert train_forest((X, y), n_trees=12, seed=6) != a
    Z = rng.uniform(0, 1, size=(300, 2))
    assert (a.predict(Z) == a.predict(Z, n_jobs=3)).all()


def test_training_errors(rng):
    X, y = separable(rng, 20)
    with pytest.raises(ValidationError):
        train_forest((np.tile([[0.3, 0.4]], (6, 1)), np.ones(6, int)))
    with pytest.raises(ValidationError):
        train_forest((X, y), mtry=3)
    with pytest.raises(ValidationError):
        train_forest((X, y), mtry=0)
    X[0, 0] = np.nan
    with pytest.raises(ValidationError):
        train_forest((X, y))


def test_default_mtry():
    X = np.random.default_rng(0).uniform(size=(20, 14))
    f = train_forest((X, np.arange(20) % 2), n_trees=2)
    assert f.mtry == 3 and len(f.trees) == 2


def test_votes_and_ties():
    assert predict(Forest([leaf(1), leaf(1), leaf(0)], 2, 1, 0), [0.0, 0.0]) == 1
    assert predict(Forest([leaf(1), leaf(0)], 2, 1, 0), [0.0, 0.0]) == 0
    assert predict(Forest([leaf(1)], 2, 1, 0), [0.0, 0.0]) == 1
    tied_leaf = Tree([-1], [0.0], [-1], [-1], [[3, 3]])
    assert tied_leaf.prediction[0] == 0


def test_predict_errors():
    f = Forest([leaf(1)], 2, 1, 0)
    with pytest.raises(ValidationError):
        predict(f, [0.0])
    with pytest.raises(ValidationError):
        predict(f, [0.0, np.inf])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=9), st.integers(0, 1000))
def test_vote_permutation_invariance(classes, seed):
    trees = [leaf(c) for c in classes]
    perm = np.random.default_rng(seed).permutation(len(trees))
    x = np.zeros((1, 2))
    a = Forest(trees, 2, 1, 0).predict(x)
    b = Forest([trees[i] for i in perm], 2, 1, 0).predict(x)
    assert a == b
    ones = sum(classes)
    assert a[0] == int(ones > len(classes) - ones)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 40))
def test_unlimited_depth_full_mtry_fits_training_set(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 3))
    y = rng.integers(0, 2, size=n)
    y[:2] = [0, 1]
    f = train_forest((X, y), n_trees=3, mtry=3, seed=seed, bootstrap=False)
    for t in f.trees:
        assert (t.predict(X) == y).all()


def test_monotone_transform_preserves_structure_and_training_predictions(rng):
    X, y = separable(rng, 150)
    y[rng.random(150) < 0.1] ^= 1  # label noise so trees branch a lot
    a = train_forest((X, y), n_trees=15, seed=2)
    b = train_forest((np.exp(3 * X), y), n_trees=15, seed=2)
    for ta, tb in zip(a.trees, b.trees):
        assert (ta.feature == tb.feature).all()
        assert (ta.left == tb.left).all() and (ta.counts == tb.counts).all()
    assert (a.predict(X) == b.predict(np.exp(3 * X))).all()


def test_model_round_trip(tmp_path, rng):
    X, y = separable(rng)
    f = train_forest((X, y), n_trees=8, seed=9, feature_names=["x", "y"])
    save_model(f, tmp_path / "m.json", extra={"config": {"seed": 9}})
    g = load_model(tmp_path / "m.json")
    assert g == f
    Z = rng.uniform(-1, 2, size=(1000, 2))
    assert (g.predict(Z) == f.predict(Z)).all()
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"format_version", "seed", "n_features", "mtry", "feature_names", "n_classes", "trees"} <= doc.keys()
    assert doc["config"] == {"seed": 9}


def test_model_file_errors(tmp_path, rng):
    X, y = separable(rng)
    save_model(train_forest((X, y), n_trees=3), tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_model(tmp_path / "t.json")
    doc = json.loads(text)
    doc["trees"] = []
    (tmp_path / "e.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_model(tmp_path / "e.json")
    doc = json.loads(text)
    del doc["mtry"]
    (tmp_path / "k.json").write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(tmp_path / "k.json")


def test_classify_raster(rng):
    X, y = separable(rng)
    f = train_forest((X, y), n_trees=10, feature_names=["a", "b"])
    data = rng.uniform(0, 1, size=(2, 4, 4)).astype(np.float32)
    r = Raster(data, ["a", "b"])
    cmap = classify_raster(f, r)
    expected = f.predict(data.reshape(2, -1).T.astype(np.float64)).reshape(4, 4)
    assert (cmap.classes == expected).all()
    assert (classify_raster(f, r, MaskLayer(np.ones((4, 4), bool))).classes == MASKED).all()
    only = np.ones((4, 4), bool)
    only[2, 1] = False
    single = classify_raster(f, r, MaskLayer(only))
    assert single.classes[2, 1] == predict(f, data[:, 2, 1])
    assert (single.classes[only] == MASKED).all()
    r.data[0, 0, 0] = ND
    assert classify_raster(f, r).classes[0, 0] == MASKED
    with pytest.raises(ValidationError):
        classify_raster(f, Raster(data, ["b", "a"]))
