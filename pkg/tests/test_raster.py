import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from canopy.errors import FormatError, RasterIOError, ValidationError
from canopy.raster import (
    MAGIC,
    MASKED,
    BandInfo,
    ClassMap,
    CloudMask,
    Raster,
    apply_cloud_mask,
    clip_roi,
    load_classmap,
    load_cloud_mask,
    load_raster,
    median_composite,
    save_classmap,
    save_cloud_mask,
    save_raster,
    stack_bands,
)

from conftest import band_raster, make_raster

ND = -9999.0


def test_raster_invariants():
    with pytest.raises(ValidationError):
        Raster(np.zeros((2, 2, 2)), ["A", "A"])
    with pytest.raises(ValidationError):
        Raster(np.zeros((1, 2, 2)), [])
    with pytest.raises(ValidationError):
        Raster(np.zeros((1, 0, 2)), ["A"])
    with pytest.raises(ValidationError):
        Raster(np.zeros((1, 2, 2)), ["A"], pixel_size_m=0)
    with pytest.raises(ValidationError):
        BandInfo("")


def test_load_small_file_row_major(tmp_path):
    r = make_raster([[0.1, 0.2], [0.3, 0.4]], ["B4"])
    save_raster(r, tmp_path / "a.msr")
    back = load_raster(tmp_path / "a.msr")
    assert back.data.reshape(-1).tolist() == np.float32([0.1, 0.2, 0.3, 0.4]).tolist()


def test_file_layout_is_exact(tmp_path):
    r = make_raster([[0.1, 0.2], [0.3, 0.4]], ["B4"], origin=(5.0, 7.0))
    save_raster(r, tmp_path / "a.msr")
    blob = (tmp_path / "a.msr").read_bytes()
    assert blob[:8] == MAGIC == b"MSRASTR1"
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + n])
    assert header == {
        "width": 2,
        "height": 2,
        "pixel_size_m": 10.0,
        "origin_x": 5.0,
        "origin_y": 7.0,
        "nodata": ND,
        "bands": [{"name": "B4", "description": "Red"}],
    }
    assert blob[12 + n :] == struct.pack("<4f", 0.1, 0.2, 0.3, 0.4)


def test_truncated_payload_is_io_error(tmp_path):
    r = Raster(np.ones((3, 2, 2)), ["A", "B", "C"])
    p = tmp_path / "t.msr"
    save_raster(r, p)
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) - 16])  # only two planes left
    with pytest.raises(RasterIOError):
        load_raster(p)


@pytest.mark.parametrize(
    "blob",
    [b"NOTMAGIC" + b"\0" * 8, MAGIC + struct.pack("<I", 5) + b"{bad}", MAGIC + struct.pack("<I", 999) + b"{}"],
)
def test_malformed_header_is_format_error(tmp_path, blob):
    p = tmp_path / "m.msr"
    p.write_bytes(blob)
    with pytest.raises(FormatError):
        load_raster(p)


def test_duplicate_band_names_in_file(tmp_path):
    header = json.dumps(
        {"width": 1, "height": 1, "pixel_size_m": 10, "origin_x": 0, "origin_y": 0, "nodata": ND,
         "bands": [{"name": "A", "description": ""}, {"name": "A", "description": ""}]}
    ).encode()
    p = tmp_path / "d.msr"
    p.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + struct.pack("<2f", 1, 2))
    with pytest.raises(ValidationError):
        load_raster(p)


def test_missing_and_unwritable(tmp_path):
    with pytest.raises(RasterIOError):
        load_raster(tmp_path / "nope.msr")
    with pytest.raises(RasterIOError):
        save_raster(make_raster([[1.0]]), tmp_path / "no_dir" / "x.msr")


def test_round_trip_random_16x16x8(tmp_path, rng):
    r = band_raster(rng)
    r.data[2, 3, 4] = r.nodata
    r.metadata["config"] = {"seed": 3}
    save_raster(r, tmp_path / "r.msr")
    assert load_raster(tmp_path / "r.msr") == r


def test_round_trip_all_nodata_and_1x1(tmp_path):
    r = Raster(np.full((2, 3, 3), ND), ["A", "B"])
    save_raster(r, tmp_path / "n.msr")
    back = load_raster(tmp_path / "n.msr")
    assert back == r and not back.valid().any()
    one = make_raster([[0.0]], ["B2"])
    save_raster(one, tmp_path / "one.msr")
    assert load_raster(tmp_path / "one.msr").data.tolist() == [[[0.0]]]


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
           elements=st.floats(-1, 10, width=32)),
    st.floats(0.5, 60),
)
def test_round_trip_property(tmp_path_factory, data, pixel_size):
    r = Raster(data, [f"B{i}" for i in range(data.shape[0])], pixel_size_m=pixel_size)
    p = tmp_path_factory.mktemp("rt") / "x.msr"
    save_raster(r, p)
    assert load_raster(p) == r


def test_cloud_and_class_map_files(tmp_path):
    m = CloudMask([[True, False], [False, False]])
    save_cloud_mask(m, tmp_path / "c.msr")
    assert load_cloud_mask(tmp_path / "c.msr") == m
    cm = ClassMap([[0, 1], [MASKED, 1]], pixel_size_m=20)
    save_classmap(cm, tmp_path / "k.msr")
    assert load_classmap(tmp_path / "k.msr") == cm


def test_apply_cloud_mask_cases():
    r = Raster(np.arange(8, dtype=np.float32).reshape(2, 2, 2), ["A", "B"])
    assert apply_cloud_mask(r, CloudMask(np.zeros((2, 2), bool))) == r
    assert not apply_cloud_mask(r, CloudMask(np.ones((2, 2), bool))).valid().any()
    checker = CloudMask([[True, False], [False, True]])
    out = apply_cloud_mask(r, checker)
    assert out.valid().tolist() == [[False, True], [True, False]]
    assert out.data[:, 0, 1].tolist() == [1.0, 5.0]
    assert apply_cloud_mask(out, checker) == out
    with pytest.raises(ValidationError):
        apply_cloud_mask(r, CloudMask(np.zeros((3, 2), bool)))


def _series(values):
    return [make_raster([[v]], ["B2"]) for v in values]


def test_median_examples():
    one = make_raster([[0.5, 0.25]], ["B2"])
    assert median_composite([one]) == one
    assert median_composite(_series([0.1, 0.9, 0.3])).data.item() == np.float32(0.3)
    assert median_composite(_series([0.2, ND, 0.6, 0.4])).data.item() == np.float32(0.4)
    # even count: mean of middle two
    assert median_composite(_series([0.2, 0.6, ND, 0.4, 0.8])).data.item() == np.float32((0.4 + 0.6) / 2)
    assert median_composite(_series([ND, ND])).data.item() == ND


def test_median_errors():
    with pytest.raises(ValidationError):
        median_composite([])
    with pytest.raises(ValidationError):
        median_composite([make_raster([[1.0]], ["B2"]), make_raster([[1.0, 2.0]], ["B2"])])
    with pytest.raises(ValidationError):
        median_composite([make_raster([[1.0]], ["B2"]), make_raster([[1.0]], ["B3"])])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_median_permutation_invariant_and_identical(seed, k):
    rng = np.random.default_rng(seed)
    series = [band_raster(rng, 4, 5) for _ in range(k)]
    for r in series:
        r.data[rng.random(r.data.shape) < 0.3] = ND
    perm = [series[i] for i in rng.permutation(k)]
    assert median_composite(series) == median_composite(perm)
    assert median_composite([series[0]] * k) == series[0]


def test_stack_bands():
    a = make_raster([[1.0]], ["B4"])
    b = make_raster([[2.0]], ["B8"])
    c = make_raster([[3.0]], ["B11"])
    s = stack_bands([a, b])
    assert s.band_names == ["B4", "B8"] and s.data.reshape(-1).tolist() == [1.0, 2.0]
    assert stack_bands([a]) == a
    assert stack_bands([stack_bands([a, b]), c]) == stack_bands([a, b, c])
    with pytest.raises(ValidationError):
        stack_bands([a, a])


def test_clip_roi():
    ramp = Raster(np.arange(16, dtype=np.float32).reshape(1, 4, 4), ["A"], pixel_size_m=10, origin=(100.0, 200.0))
    assert clip_roi(ramp, 0, 0, 4, 4) == ramp
    assert clip_roi(ramp, 0, 0, 1, 1).data.item() == 0.0
    sub = clip_roi(ramp, 1, 2, 2, 2)
    assert sub.data[0].tolist() == [[9.0, 10.0], [13.0, 14.0]]
    assert sub.origin == (110.0, 220.0)
    for window in [(3, 0, 2, 1), (0, 0, 0, 1), (-1, 0, 1, 1)]:
        with pytest.raises(ValidationError):
            clip_roi(ramp, *window)
