import json

import numpy as np
import pytest

from canopy.builtmask import build_mask
from canopy.errors import FormatError, ValidationError
from canopy.raster import CANONICAL_BANDS, NON_TREE, TREE, ClassMap, median_composite
from canopy.scenegen import (
    MATERIAL_CODES,
    SPECTRA,
    Material,
    Region,
    SceneSpec,
    generate_scene,
    load_scene_spec,
    sample_labels,
    urban_scene_spec,
)
from canopy.spectra import build_feature_stack, evi, ndbi, ndvi


def clean(spec: SceneSpec) -> SceneSpec:
    spec.noise_sigma = 0.0
    spec.illumination_sigma = 0.0
    return spec


def test_all_tree_scene():
    spec = clean(SceneSpec(12, 9, regions=[Region("rect", (0, 0, 12, 9), "TREE")]))
    scene = generate_scene(spec)
    obs, mask = scene.observations[0]
    assert obs.band_names == list(CANONICAL_BANDS)
    assert (ndvi(obs).data > 0.6).all()
    assert (ndbi(obs).data < 0).all()
    assert (scene.truth.classes == TREE).all()
    assert not mask.flags.any()


@pytest.mark.parametrize("illumination", [0.0, 0.1])
def test_builtup_is_masked(illumination):
    spec = SceneSpec(20, 20, regions=[Region("rect", (5, 5, 10, 10), "BUILTUP")], noise_sigma=0.0,
                     illumination_sigma=illumination)
    scene = generate_scene(spec)
    obs = scene.observations[0][0]
    built = scene.materials == MATERIAL_CODES[Material.BUILTUP]
    assert built.sum() == 100
    assert (ndbi(obs).data[0][built] > 0).all()
    assert (evi(obs).data[0][built] <= 0.2).all()
    assert (ndvi(obs).data[0][built] < 0.2).all()
    excluded = build_mask(build_feature_stack(obs)).excluded
    assert excluded[built].all()
    assert not excluded[~built].any()


def test_template_margins():
    # noise-free index values sit at least 0.1 away from every mask threshold
    for material, spectrum in SPECTRA.items():
        b = dict(zip(CANONICAL_BANDS, spectrum))
        nd = (b["B8"] - b["B4"]) / (b["B8"] + b["B4"])
        ev = 2.5 * (b["B8"] - b["B4"]) / (b["B8"] + 6 * b["B4"] - 7.5 * b["B2"] + 1)
        bi = (b["B11"] - b["B8"]) / (b["B11"] + b["B8"])
        assert abs(bi) >= 0.1, material
        if material in (Material.BUILTUP, Material.BARE):
            assert nd <= 0.1 and ev <= 0.1 and bi >= 0.1
        else:
            assert bi <= -0.1 or min(nd, ev) >= 0.3, material
        if material is Material.TREE:
            assert nd > 0.6 and bi < 0


def test_deterministic():
    spec = urban_scene_spec(seed=3, width=64, height=48, n_observations=2, cloud_fraction=0.1)
    a, b = generate_scene(spec), generate_scene(spec)
    for (ra, ma), (rb, mb) in zip(a.observations, b.observations):
        assert ra == rb and ma == mb
    assert a.truth == b.truth
    c = generate_scene(urban_scene_spec(seed=4, width=64, height=48))
    assert c.truth != a.truth


def test_cloud_fraction_approximate():
    spec = SceneSpec(100, 100, n_observations=4, cloud_fraction=0.2)
    for _, mask in generate_scene(spec).observations:
        assert 0.2 <= mask.fraction <= 0.35


def test_clean_median_equals_single_observation():
    spec = urban_scene_spec(seed=1, width=40, height=40, n_observations=3, noise_sigma=0.0)
    scene = generate_scene(spec)
    first = scene.observations[0][0]
    assert median_composite([o for o, _ in scene.observations]) == first


def test_noise_free_templates_are_separable():
    spec = clean(urban_scene_spec(seed=2, width=64, height=64, water=True))
    scene = generate_scene(spec)
    obs = scene.observations[0][0]
    table = np.array([SPECTRA[m] for m in Material])
    pix = obs.data.reshape(8, -1).T.astype(np.float64)
    nearest = np.argmin(((pix[:, None, :] - table[None]) ** 2).sum(-1), axis=1)
    assert (nearest.reshape(64, 64) == scene.materials).all()
    pred = np.where(nearest == MATERIAL_CODES[Material.TREE], TREE, NON_TREE).reshape(64, 64)
    assert (pred == scene.truth.classes).all()


def test_regions_overlap_later_wins():
    spec = SceneSpec(10, 10, regions=[Region("rect", (0, 0, 10, 10), "TREE"), Region("disk", (5, 5, 2), "WATER")])
    codes = generate_scene(spec).materials
    assert codes[5, 5] == MATERIAL_CODES[Material.WATER]
    assert codes[0, 0] == MATERIAL_CODES[Material.TREE]


def test_spec_errors(tmp_path):
    with pytest.raises(ValidationError):
        generate_scene(SceneSpec(0, 10))
    with pytest.raises(ValidationError):
        generate_scene(SceneSpec(5, 5, cloud_fraction=1.0))
    with pytest.raises(ValidationError):
        Region("rect", (0, 0, 1), "TREE")
    with pytest.raises(ValueError):
        Region("rect", (0, 0, 1, 1), "CONCRETE")
    (tmp_path / "s.json").write_text("{not json")
    with pytest.raises(FormatError):
        load_scene_spec(tmp_path / "s.json")
    (tmp_path / "u.json").write_text(json.dumps({"width": 3, "height": 3, "colour": 1}))
    with pytest.raises(FormatError):
        load_scene_spec(tmp_path / "u.json")


def test_spec_json_round_trip(tmp_path):
    spec = urban_scene_spec(seed=5, water=True)
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    back = load_scene_spec(tmp_path / "s.json")
    assert back.to_dict() == spec.to_dict()


def test_sample_labels():
    half = np.zeros((10, 10), np.int8)
    half[:, 5:] = TREE
    truth = ClassMap(half)
    ls = sample_labels(truth, 50, seed=1)
    assert len(ls) == 100 and np.bincount(ls.labels).tolist() == [50, 50]
    assert (truth.classes[ls.rows, ls.cols] == ls.labels).all()
    assert len(set(zip(ls.rows.tolist(), ls.cols.tolist()))) == 100
    assert sample_labels(truth, 50, seed=1) == ls
    assert sample_labels(truth, 20, seed=2) != sample_labels(truth, 20, seed=3)
    small = np.zeros((16, 16), np.int8)
    small[:8, :8] = TREE
    with pytest.raises(ValidationError):
        sample_labels(ClassMap(small), 10000)
