"""Reading microscopy TIFF/PNG slices and writing 8-bit RGB panels."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from .errors import InvalidInput, IoError, NotFound, UnsupportedFormat

# Lossless TIFF compression schemes. Anything else (JPEG, WebP, JPEG-XL, ...) is refused.
_LOSSLESS_TIFF = {1, 5, 8, 32773, 32946, 34925, 50000}

_DTYPE_DEPTH = {np.dtype(np.uint8): 8, np.dtype(np.uint16): 16}


@dataclass(frozen=True)
class RawImage:
    pixels: np.ndarray
    bit_depth: int
    channels: int = 1

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise UnsupportedFormat(f"bit depth {self.bit_depth} not supported (8 or 16)")
        if self.pixels.ndim not in (2, 3) or self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise InvalidInput(f"bad image shape {self.pixels.shape}")

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1


def _tiff_grayscale(path: Path) -> np.ndarray:
    with tifffile.TiffFile(path) as tif:
        if len(tif.pages) != 1:
            raise UnsupportedFormat(f"{path}: page count {len(tif.pages)}; only single-page TIFFs are read")
        page = tif.pages[0]
        if int(page.compression) not in _LOSSLESS_TIFF:
            raise UnsupportedFormat(f"{path}: compression {page.compression.name} is lossy or unknown")
        if page.samplesperpixel != 1:
            raise UnsupportedFormat(f"{path}: {page.samplesperpixel} channels; expected 1 (grayscale)")
        return page.asarray()


def _png_grayscale(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(im)
        elif im.mode == "I":
            # Pillow widens 16-bit grayscale PNGs to int32.
            arr = np.asarray(im)
            if arr.min() < 0 or arr.max() > 65535:
                raise UnsupportedFormat(f"{path}: 32-bit integer pixels")
            arr = arr.astype(np.uint16)
        else:
            raise UnsupportedFormat(f"{path}: mode {im.mode} has {len(im.getbands())} channels; expected grayscale")
    return arr


def read_grayscale(path: str | os.PathLike) -> RawImage:
    """Read a single-channel 8/16-bit TIFF or PNG without altering pixel values."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such image: {path}")
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        arr = _tiff_grayscale(path)
    elif suffix == ".png":
        arr = _png_grayscale(path)
    else:
        raise UnsupportedFormat(f"{path}: extension {suffix!r} is neither TIFF nor PNG")
    if arr.ndim != 2:
        raise UnsupportedFormat(f"{path}: array shape {arr.shape}; expected 2-D grayscale")
    depth = _DTYPE_DEPTH.get(arr.dtype)
    if depth is None:
        raise UnsupportedFormat(f"{path}: sample dtype {arr.dtype}; expected uint8 or uint16")
    return RawImage(np.ascontiguousarray(arr), depth, 1)


def write_grayscale(path: str | os.PathLike, pixels: np.ndarray) -> None:
    """Write an uncompressed single-channel TIFF (uint8 or uint16)."""
    pixels = np.asarray(pixels)
    if pixels.dtype not in _DTYPE_DEPTH or pixels.ndim != 2:
        raise UnsupportedFormat(f"cannot write {pixels.dtype} array of shape {pixels.shape} as grayscale TIFF")
    try:
        tifffile.imwrite(path, pixels, photometric="minisblack")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def to_unit_float(img: RawImage) -> np.ndarray:
    return img.pixels.astype(np.float64) / img.max_value


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round-half-up quantization of [0,1] floats to bytes."""
    img = np.asarray(img, dtype=np.float64)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_rgb8(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInput(f"expected H×W×3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInput("image contains non-finite values")
    try:
        Image.fromarray(quantize8(img), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_rgb(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit color image as an H×W×3 float array in [0,1]."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such image: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return arr.astype(np.float64) / 255.0


def slice_filename(index: int, tag: str, ext: str = "png") -> str:
    return f"slice_{index:04d}_{tag}.{ext}"
