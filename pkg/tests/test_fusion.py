import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lumen2he.errors import InvalidInput, NotFound
from lumen2he.fusion import (
    ChannelPair,
    canonical_slice_id,
    find_slices,
    fuse_channels,
    load_pair,
    prepare,
    read_manifest,
    robust_normalize,
)
from lumen2he.imageio import read_rgb
from oracles import normalize_oracle
from synth import write_source_dir


def test_constant_image_maps_to_zero():
    assert np.all(robust_normalize(np.full((5, 4), 0.7), 1, 99) == 0)
    assert np.all(robust_normalize(np.full((5, 4), 0.7), 0, 100) == 0)


def test_full_range_ramp_unchanged():
    ramp = np.array([[0.0, 0.25, 0.5, 0.75, 1.0]])
    np.testing.assert_array_equal(robust_normalize(ramp, 0, 100), ramp)


def test_seeded_random_matches_sort_oracle():
    x = np.random.default_rng(11).random((10, 10))
    np.testing.assert_allclose(robust_normalize(x, 1, 99), normalize_oracle(x, 1, 99), atol=1e-12, rtol=0)


@pytest.mark.parametrize("lo,hi", [(5, 5), (-1, 50), (10, 101), (60, 40)])
def test_bad_percentiles(lo, hi):
    with pytest.raises(InvalidInput):
        robust_normalize(np.ones((2, 2)), lo, hi)


def test_empty_image():
    with pytest.raises(InvalidInput):
        robust_normalize(np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 10)), elements=st.floats(0, 1)),
       st.floats(0, 40), st.floats(60, 100))
def test_normalize_monotone_and_bounded(x, p_low, p_high):
    y = robust_normalize(x, p_low, p_high)
    assert np.all((y >= 0) & (y <= 1))
    order = np.argsort(x, axis=None, kind="stable")
    assert np.all(np.diff(y.ravel()[order]) >= 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(0, 1)))
def test_normalize_idempotent_on_full_range(x):
    x = x.reshape(1, -1)
    x[0, 0], x[0, -1] = 0.0, 1.0
    y = robust_normalize(x, 0, 100)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(robust_normalize(y, 0, 100), y)


@pytest.mark.parametrize(
    "c01,c02,rgb",
    [(1.0, 0.0, (0.0, 0.0, 1.0)), (0.0, 0.0, (0.0, 0.0, 0.0)), (0.5, 0.8, (0.24, 0.8, 0.5))],
)
def test_fuse_pixel(c01, c02, rgb):
    out = fuse_channels(np.full((1, 1), c01), np.full((1, 1), c02))
    np.testing.assert_allclose(out[0, 0], rgb, atol=1e-15)


def test_fuse_shape_mismatch():
    with pytest.raises(InvalidInput):
        fuse_channels(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(InvalidInput):
        ChannelPair(np.zeros((2, 2)), np.zeros((3, 2)), "s")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 5, 2), elements=st.floats(0, 1)))
def test_fuse_invariants(ch):
    out = fuse_channels(ch[..., 0], ch[..., 1])
    np.testing.assert_array_equal(out[..., 0], 0.3 * out[..., 1])
    np.testing.assert_array_equal(out[..., 2], ch[..., 0])
    np.testing.assert_array_equal(out[..., 1], ch[..., 1])


def test_canonical_slice_id():
    assert canonical_slice_id("1") == "slice_0001"
    assert canonical_slice_id("0111") == "slice_0111"
    assert canonical_slice_id("slice_0200") == "slice_0200"


def test_find_slices_skips_unpaired(tmp_path):
    write_source_dir(tmp_path, 2, size=8)
    (tmp_path / "slice_0001_c02.tif").unlink()
    assert list(find_slices(tmp_path)) == ["slice_0002"]


def test_load_pair_missing(tmp_path):
    write_source_dir(tmp_path, 1, size=8)
    with pytest.raises(NotFound, match="slice_0005"):
        load_pair(tmp_path, "5")


def test_prepare_writes_pngs_and_manifest(tmp_path):
    src, out = tmp_path / "src", tmp_path / "out"
    ids = write_source_dir(src, 3, size=16)
    manifest = prepare(src, out)
    rows = read_manifest(manifest)
    assert [r["slice_id"] for r in rows] == ids
    for r in rows:
        assert r["c01_path"].endswith(f"{r['slice_id']}_c01.tif")
        rgb = read_rgb(r["output_path"])
        assert rgb.shape == (16, 16, 3)
        # Red is 0.3 * green up to 8-bit quantization.
        assert np.max(np.abs(rgb[..., 0] - 0.3 * rgb[..., 1])) <= 0.3 / 510 + 1 / 510 + 1e-9


def test_prepare_dataset_scope(tmp_path):
    src = tmp_path / "src"
    write_source_dir(src, 2, size=16)
    m1 = prepare(src, tmp_path / "a", scope="slice")
    m2 = prepare(src, tmp_path / "b", scope="dataset")
    a = read_rgb(read_manifest(m1)[0]["output_path"])
    b = read_rgb(read_manifest(m2)[0]["output_path"])
    assert a.shape == b.shape and not np.array_equal(a, b)
    with pytest.raises(InvalidInput):
        prepare(src, tmp_path / "c", scope="global")


def test_prepare_empty_source(tmp_path):
    with pytest.raises(NotFound):
        prepare(tmp_path, tmp_path / "out")
