import numpy as np
import pytest
import tifffile
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from lumen2he.errors import IoError, NotFound, UnsupportedFormat
from lumen2he.imageio import (
    RawImage,
    read_grayscale,
    read_rgb,
    slice_filename,
    to_unit_float,
    write_grayscale,
    write_rgb8,
)


def test_read_8bit_tiff_lossless(tmp_path):
    px = np.array([[0, 255], [128, 64]], dtype=np.uint8)
    tifffile.imwrite(tmp_path / "a.tif", px)
    img = read_grayscale(tmp_path / "a.tif")
    assert img.bit_depth == 8
    assert img.channels == 1
    np.testing.assert_array_equal(img.pixels, px)


def test_read_16bit_max_value(tmp_path):
    tifffile.imwrite(tmp_path / "a.tif", np.array([[65535]], dtype=np.uint16))
    img = read_grayscale(tmp_path / "a.tif")
    assert img.bit_depth == 16
    np.testing.assert_array_equal(img.pixels, [[65535]])


def test_write_then_read_random_16bit_roundtrip(tmp_path):
    px = np.random.default_rng(7).integers(0, 65536, (64, 64), dtype=np.uint16)
    write_grayscale(tmp_path / "r.tif", px)
    back = read_grayscale(tmp_path / "r.tif").pixels
    assert back.dtype == np.uint16
    assert back.tobytes() == px.tobytes()


def test_lossless_compressed_tiff_accepted(tmp_path):
    px = np.arange(64, dtype=np.uint16).reshape(8, 8)
    tifffile.imwrite(tmp_path / "z.tif", px, compression="zlib")
    np.testing.assert_array_equal(read_grayscale(tmp_path / "z.tif").pixels, px)


def test_grayscale_png(tmp_path):
    px = np.array([[3, 200]], dtype=np.uint8)
    Image.fromarray(px, mode="L").save(tmp_path / "g.png")
    img = read_grayscale(tmp_path / "g.png")
    assert img.bit_depth == 8
    np.testing.assert_array_equal(img.pixels, px)


def test_missing_file(tmp_path):
    with pytest.raises(NotFound):
        read_grayscale(tmp_path / "nope.tif")


def test_rgb_tiff_rejected_naming_channels(tmp_path):
    tifffile.imwrite(tmp_path / "rgb.tif", np.zeros((4, 4, 3), np.uint8), photometric="rgb")
    with pytest.raises(UnsupportedFormat, match="channels"):
        read_grayscale(tmp_path / "rgb.tif")


def test_float_tiff_rejected_naming_dtype(tmp_path):
    tifffile.imwrite(tmp_path / "f.tif", np.zeros((4, 4), np.float32))
    with pytest.raises(UnsupportedFormat, match="dtype"):
        read_grayscale(tmp_path / "f.tif")


def test_multipage_tiff_rejected(tmp_path):
    tifffile.imwrite(tmp_path / "m.tif", np.zeros((2, 4, 4), np.uint8), metadata=None)
    with pytest.raises(UnsupportedFormat):
        read_grayscale(tmp_path / "m.tif")


def test_rgb_png_rejected(tmp_path):
    Image.fromarray(np.zeros((2, 2, 3), np.uint8), mode="RGB").save(tmp_path / "c.png")
    with pytest.raises(UnsupportedFormat, match="channels"):
        read_grayscale(tmp_path / "c.png")


@pytest.mark.parametrize("depth,value,expected", [(8, 255, 1.0), (16, 0, 0.0), (8, 51, 0.2)])
def test_to_unit_float(depth, value, expected):
    dtype = np.uint8 if depth == 8 else np.uint16
    out = to_unit_float(RawImage(np.array([[value]], dtype=dtype), depth))
    assert out[0, 0] == pytest.approx(expected, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_to_unit_float_range_and_monotone(px):
    f = to_unit_float(RawImage(px, 16))
    assert np.all((f >= 0) & (f <= 1)) and np.all(np.isfinite(f))
    order = np.argsort(px, axis=None, kind="stable")
    assert np.all(np.diff(f.ravel()[order]) >= 0)


@pytest.mark.parametrize("v,byte", [(1.0, 255), (0.0, 0), (0.5, 128)])
def test_write_rgb8_quantization(tmp_path, v, byte):
    write_rgb8(tmp_path / "o.png", np.full((3, 5, 3), v))
    data = np.asarray(Image.open(tmp_path / "o.png"))
    assert data.shape == (3, 5, 3)
    assert np.all(data == byte)


def test_write_rgb8_unwritable(tmp_path):
    with pytest.raises(IoError):
        write_rgb8(tmp_path / "missing_dir" / "o.png", np.zeros((2, 2, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
              elements=st.floats(0, 1)))
def test_rgb8_roundtrip_within_half_step(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("rt") / "x.png"
    write_rgb8(path, img)
    assert np.max(np.abs(read_rgb(path) - img)) <= 1 / 510 + 1e-12


def test_slice_filename():
    assert slice_filename(1, "c01") == "slice_0001_c01.png"
