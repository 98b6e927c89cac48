"""Translating fluorescence slices with a trained G_A2B, and the two montage layouts
(slice grid: C01 | C02 | virtual H&E; epoch comparison: one column per checkpoint)."""
from __future__ import annotations

import functools
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFont

from .dataset import from_model_range, resize_bilinear, to_model_range
from .errors import CheckpointError, InvalidInput, NotFound
from .fusion import ChannelPair, canonical_slice_id, find_slices, fuse_pair, load_pair, robust_normalize
from .imageio import quantize8, write_rgb8
from .trainer import configs_from_checkpoint, load_checkpoint, load_generator

RAW_COLUMNS = {"c01": "C01", "c02": "C02"}
VIRTUAL_HE_LABEL = "virtual H&E"
_EPOCH_RE = re.compile(r"ckpt_epoch_(\d+)")


@dataclass(frozen=True)
class MontageSpec:
    """Rows are slice ids; each column is ``"c01"``, ``"c02"`` or a checkpoint path."""

    rows: list[str]
    columns: list[str]
    labels: list[str] | None = None
    cell_size: int = 256
    gutter_px: int = 4
    label_band_px: int = 24
    percentiles: tuple[float, float] = field(default=(1.0, 99.0))

    def __post_init__(self):
        if not self.rows or not self.columns:
            raise InvalidInput("a montage needs at least one row and one column")
        if self.labels is not None and len(self.labels) != len(self.columns):
            raise InvalidInput(f"{len(self.labels)} labels for {len(self.columns)} columns")

    def canvas_size(self) -> tuple[int, int]:
        return montage_size(len(self.rows), len(self.columns), self.cell_size, self.gutter_px, self.label_band_px)


def montage_size(rows: int, cols: int, cell: int = 256, gutter: int = 4, band: int = 24) -> tuple[int, int]:
    """(width, height) of a rows×cols montage."""
    return cols * cell + (cols - 1) * gutter, band + rows * cell + (rows - 1) * gutter


@functools.lru_cache(maxsize=8)
def _cached_model(path: str, mtime_ns: int):
    payload = load_checkpoint(path)
    _, gen_cfg, _ = configs_from_checkpoint(payload)
    run = payload["config"].get("run") or {}
    image_size = int(run.get("image_size", 256))
    percentiles = tuple(run.get("percentiles", (1.0, 99.0)))
    return load_generator(path), image_size, percentiles


def _model(ckpt: str | os.PathLike):
    p = Path(ckpt)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return _cached_model(str(p.resolve()), p.stat().st_mtime_ns)


def translate(
    ckpt: str | os.PathLike,
    pair: ChannelPair,
    percentiles: tuple[float, float] | None = None,
    size: int | None = None,
) -> np.ndarray:
    """Fuse, resize, scale, run G_A2B, and map back to an H×W×3 image in [0,1].

    Percentiles and output size default to the values the checkpoint was trained with.
    """
    net, trained_size, trained_pct = _model(ckpt)
    p_low, p_high = percentiles if percentiles is not None else trained_pct
    size = size or trained_size
    rgb = resize_bilinear(fuse_pair(pair, p_low, p_high), size, size)
    with torch.no_grad():
        out = net(to_model_range(rgb))
    return from_model_range(out)


def raw_channel_cell(pair: ChannelPair, channel: str, size: int = 256, percentiles=(1.0, 99.0)) -> np.ndarray:
    """A normalized fluorescence channel replicated to gray RGB."""
    ch = pair.c01 if channel == "c01" else pair.c02
    g = resize_bilinear(robust_normalize(ch, *percentiles), size, size)
    return np.repeat(g[:, :, None], 3, axis=2)


def _font():
    try:
        return ImageFont.load_default(size=14)
    except TypeError:
        return ImageFont.load_default()


def compose(cells: list[list[np.ndarray]], labels: list[str], cell: int, gutter: int, band: int) -> Image.Image:
    """Lay out quantized cells on a white canvas with column labels in the top band."""
    rows, cols = len(cells), len(cells[0])
    w, h = montage_size(rows, cols, cell, gutter, band)
    canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    for r, row in enumerate(cells):
        for c, img in enumerate(row):
            if img.shape[:2] != (cell, cell):
                img = resize_bilinear(img, cell, cell)
            y, x = band + r * (cell + gutter), c * (cell + gutter)
            canvas[y:y + cell, x:x + cell] = quantize8(img)
    im = Image.fromarray(canvas, mode="RGB")
    if band > 0:
        draw, font = ImageDraw.Draw(im), _font()
        for c, text in enumerate(labels):
            x0 = c * (cell + gutter)
            left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
            tx = x0 + max(0, (cell - (right - left)) // 2)
            ty = max(0, (band - (bottom - top)) // 2 - top)
            draw.text((tx, ty), text, fill=(0, 0, 0), font=font)
    return im


def _column_label(col: str) -> str:
    if col.lower() in RAW_COLUMNS:
        return RAW_COLUMNS[col.lower()]
    return VIRTUAL_HE_LABEL


def _load(data_dir, sid) -> ChannelPair:
    try:
        return load_pair(data_dir, sid)
    except NotFound as exc:
        raise NotFound(f"slice {canonical_slice_id(sid)} not found in {data_dir}: {exc}") from exc


def render_slice_grid(spec: MontageSpec, data_dir: str | os.PathLike, out: str | os.PathLike) -> Path:
    labels = spec.labels or [_column_label(c) for c in spec.columns]
    cells = []
    for sid in spec.rows:
        pair = _load(data_dir, sid)
        row = []
        for col in spec.columns:
            if col.lower() in RAW_COLUMNS:
                row.append(raw_channel_cell(pair, col.lower(), spec.cell_size, spec.percentiles))
            else:
                row.append(translate(col, pair))
        cells.append(row)
    out = Path(out)
    compose(cells, labels, spec.cell_size, spec.gutter_px, spec.label_band_px).save(out, format="PNG")
    return out


def checkpoint_epoch(path: str | os.PathLike) -> int:
    m = _EPOCH_RE.search(Path(path).name)
    if m is None:
        raise InvalidInput(f"cannot read an epoch number from {Path(path).name!r} (expected ckpt_epoch_N)")
    return int(m.group(1))


def render_epoch_comparison(
    slice_ids: list[str],
    ckpts: list[str | os.PathLike],
    out: str | os.PathLike,
    data_dir: str | os.PathLike,
    **layout,
) -> Path:
    """One row per slice, one column per checkpoint in ascending epoch order."""
    if not ckpts:
        raise InvalidInput("need at least one checkpoint")
    ordered = sorted(ckpts, key=checkpoint_epoch)
    spec = MontageSpec(
        rows=list(slice_ids),
        columns=[str(p) for p in ordered],
        labels=[f"Epoch {checkpoint_epoch(p)}" for p in ordered],
        **layout,
    )
    return render_slice_grid(spec, data_dir, out)


def translate_directory(ckpt, input_dir, out_dir) -> list[Path]:
    """Translate every slice pair in ``input_dir``; writes ``slice_XXXX_vhe.png`` files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sid in find_slices(input_dir):
        path = out_dir / f"{sid}_vhe.png"
        write_rgb8(path, translate(ckpt, load_pair(input_dir, sid)))
        written.append(path)
    if not written:
        raise NotFound(f"no slice_XXXX_c01/c02 TIFF pairs found in {input_dir}")
    return written
