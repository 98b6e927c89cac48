"""Outlier-robust channel normalization and the two-channel to RGB color mapping.

C01 (TO-PRO-3, nuclei) drives blue; C02 (eosin-like cytoplasm) drives green and
contributes 30% to red. Each channel is percentile-normalized before mixing.
"""
from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput, NotFound
from .imageio import read_grayscale, to_unit_float, write_rgb8

log = logging.getLogger(__name__)

RED_FROM_C02 = 0.3

SLICE_RE = re.compile(r"^(slice_\d+)_c0([12])\.tiff?$", re.IGNORECASE)
MANIFEST_NAME = "manifest.tsv"
MANIFEST_FIELDS = ("slice_id", "c01_path", "c02_path", "output_path")


@dataclass(frozen=True)
class ChannelPair:
    c01: np.ndarray
    c02: np.ndarray
    slice_id: str = ""

    def __post_init__(self):
        if self.c01.shape != self.c02.shape:
            raise InvalidInput(
                f"{self.slice_id or 'pair'}: C01 shape {self.c01.shape} != C02 shape {self.c02.shape}"
            )


def percentile_bounds(x: np.ndarray, p_low: float, p_high: float) -> tuple[float, float]:
    if not 0 <= p_low < p_high <= 100:
        raise InvalidInput(f"need 0 <= p_low < p_high <= 100, got ({p_low}, {p_high})")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidInput("cannot normalize an empty image")
    lo, hi = np.percentile(x, [p_low, p_high], method="linear")
    return float(lo), float(hi)


def rescale(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if hi <= lo:
        return np.zeros_like(x)
    # A subnormal window width can overflow to inf; the clip still yields the right end point.
    with np.errstate(over="ignore"):
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def robust_normalize(ch: np.ndarray, p_low: float = 1.0, p_high: float = 99.0) -> np.ndarray:
    """Map the [p_low, p_high] percentile window of ``ch`` onto [0, 1], clipping outside.

    Constant images have a zero-width window and map to all zeros.
    """
    lo, hi = percentile_bounds(ch, p_low, p_high)
    return rescale(ch, lo, hi)


def fuse_channels(c01n: np.ndarray, c02n: np.ndarray) -> np.ndarray:
    c01n = np.asarray(c01n, dtype=np.float64)
    c02n = np.asarray(c02n, dtype=np.float64)
    if c01n.shape != c02n.shape:
        raise InvalidInput(f"channel shapes differ: {c01n.shape} vs {c02n.shape}")
    if c01n.ndim != 2:
        raise InvalidInput(f"channels must be 2-D, got {c01n.ndim}-D")
    return np.stack([RED_FROM_C02 * c02n, c02n, c01n], axis=-1)


def fuse_pair(pair: ChannelPair, p_low: float = 1.0, p_high: float = 99.0) -> np.ndarray:
    return fuse_channels(robust_normalize(pair.c01, p_low, p_high), robust_normalize(pair.c02, p_low, p_high))


def find_slices(source_dir: str | os.PathLike) -> dict[str, tuple[Path, Path]]:
    """Pair up ``slice_XXXX_c01.tif`` / ``slice_XXXX_c02.tif`` files by slice id."""
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise NotFound(f"source directory does not exist: {source_dir}")
    found: dict[str, dict[str, Path]] = {}
    for p in sorted(source_dir.iterdir()):
        m = SLICE_RE.match(p.name)
        if m:
            found.setdefault(m.group(1), {})[m.group(2)] = p
    pairs = {}
    for sid, chans in sorted(found.items()):
        if set(chans) != {"1", "2"}:
            missing = "c01" if "1" not in chans else "c02"
            log.warning("slice %s has no %s file; skipped", sid, missing)
            continue
        pairs[sid] = (chans["1"], chans["2"])
    return pairs


def canonical_slice_id(token: str) -> str:
    """Accept ``slice_0001``, ``0001`` or ``1`` and return ``slice_0001``."""
    token = token.strip()
    if token.isdigit():
        return f"slice_{int(token):04d}"
    return token


def load_pair(source_dir: str | os.PathLike, slice_id: str) -> ChannelPair:
    slice_id = canonical_slice_id(slice_id)
    source_dir = Path(source_dir)
    paths = []
    for tag in ("c01", "c02"):
        for ext in ("tif", "tiff"):
            p = source_dir / f"{slice_id}_{tag}.{ext}"
            if p.is_file():
                paths.append(p)
                break
        else:
            raise NotFound(f"slice {slice_id}: no {tag} TIFF in {source_dir}")
    c01, c02 = (to_unit_float(read_grayscale(p)) for p in paths)
    return ChannelPair(c01, c02, slice_id)


def prepare(
    source_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    p_low: float = 1.0,
    p_high: float = 99.0,
    scope: str = "slice",
) -> Path:
    """Fuse every channel pair in ``source_dir`` into RGB PNGs and write a manifest.

    ``scope="dataset"`` computes the percentile window once over all slices of a
    channel instead of per slice. Returns the manifest path.
    """
    if scope not in ("slice", "dataset"):
        raise InvalidInput(f"normalization scope must be 'slice' or 'dataset', got {scope!r}")
    pairs = find_slices(source_dir)
    if not pairs:
        raise NotFound(f"no slice_XXXX_c01/c02 TIFF pairs found in {source_dir}")
    out_dir = Path(out_dir)
    fused_dir = out_dir / "fused"
    fused_dir.mkdir(parents=True, exist_ok=True)

    bounds = None
    if scope == "dataset":
        c01_all, c02_all = [], []
        for c01_path, c02_path in pairs.values():
            c01_all.append(to_unit_float(read_grayscale(c01_path)).ravel())
            c02_all.append(to_unit_float(read_grayscale(c02_path)).ravel())
        bounds = (
            percentile_bounds(np.concatenate(c01_all), p_low, p_high),
            percentile_bounds(np.concatenate(c02_all), p_low, p_high),
        )

    rows = []
    for sid, (c01_path, c02_path) in pairs.items():
        pair = ChannelPair(to_unit_float(read_grayscale(c01_path)), to_unit_float(read_grayscale(c02_path)), sid)
        if bounds is None:
            rgb = fuse_pair(pair, p_low, p_high)
        else:
            rgb = fuse_channels(rescale(pair.c01, *bounds[0]), rescale(pair.c02, *bounds[1]))
        out_path = fused_dir / f"{sid}_fused.png"
        write_rgb8(out_path, rgb)
        rows.append((sid, str(c01_path), str(c02_path), str(out_path)))
    manifest = out_dir / MANIFEST_NAME
    write_manifest(manifest, rows)
    log.info("fused %d slices into %s", len(rows), fused_dir)
    return manifest


def write_manifest(path: str | os.PathLike, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)


def read_manifest(path: str | os.PathLike) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if rows and tuple(rows[0].keys()) != MANIFEST_FIELDS:
        raise InvalidInput(f"{path}: unexpected manifest columns {tuple(rows[0].keys())}")
    return rows
