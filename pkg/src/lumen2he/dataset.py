"""Resizing, augmentation, model-range scaling and unpaired sampling for the two domains."""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .errors import InvalidInput, NotFound
from .fusion import read_manifest
from .imageio import read_rgb

# ITU-R BT.601 luma, used for the contrast pivot.
LUMA = np.array([0.299, 0.587, 0.114])


class Domain(str, enum.Enum):
    A_fluorescence = "A"
    B_HE = "B"


@dataclass(frozen=True)
class AugmentParams:
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    brightness_delta: float = 0.1
    contrast_delta: float = 0.1

    def __post_init__(self):
        for name in ("flip_h_prob", "flip_v_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidInput(f"{name}={p} is not a probability")
        for name in ("brightness_delta", "contrast_delta"):
            d = getattr(self, name)
            if not 0.0 <= d < 1.0:
                raise InvalidInput(f"{name}={d} must lie in [0, 1)")


NO_AUGMENT = AugmentParams(0.0, 0.0, 0.0, 0.0)


def resize_bilinear(img: np.ndarray, out_h: int = 256, out_w: int = 256) -> np.ndarray:
    """Bilinear resize with half-pixel centers (no corner alignment, no antialiasing).

    Works on H×W or H×W×C arrays. Source coordinates falling outside the image
    are clamped to the border pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise InvalidInput(f"target size must be positive, got {out_h}×{out_w}")
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInput(f"cannot resize array of shape {img.shape}")
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = axis(in_h, out_h)
    x0, x1, wx = axis(in_w, out_w)
    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def augment(img: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Random h-flip, v-flip, brightness scale, contrast scale, then clip to [0, 1].

    Exactly four draws are taken from ``rng`` per call, in that order, whether or
    not a step ends up changing the image.
    """
    u_h = rng.random()
    u_v = rng.random()
    b = rng.uniform(1.0 - params.brightness_delta, 1.0 + params.brightness_delta)
    c = rng.uniform(1.0 - params.contrast_delta, 1.0 + params.contrast_delta)

    out = np.asarray(img, dtype=np.float64)
    if u_h < params.flip_h_prob:
        out = out[:, ::-1]
    if u_v < params.flip_v_prob:
        out = out[::-1, :]
    if params.brightness_delta > 0:
        out = out * b
    if params.contrast_delta > 0:
        mean = float((out @ LUMA).mean()) if out.ndim == 3 else float(out.mean())
        out = mean + c * (out - mean)
    return np.clip(out, 0.0, 1.0)


def to_model_range(img: np.ndarray) -> torch.Tensor:
    """H×W×3 image in [0,1] -> 1×3×H×W float32 tensor in [-1,1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInput(f"expected H×W×3 image, got shape {img.shape}")
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(torch.float32)
    return ((t - 0.5) / 0.5).unsqueeze(0)


def from_model_range(t) -> np.ndarray:
    """Single-image model tensor (1×3×H×W or 3×H×W) -> H×W×3 float64 array in [0,1]."""
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().to(torch.float64).numpy()
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise InvalidInput(f"expected one image, got batch of {t.shape[0]}")
        t = t[0]
    if t.ndim != 3:
        raise InvalidInput(f"expected C×H×W tensor, got shape {t.shape}")
    return np.clip(t * 0.5 + 0.5, 0.0, 1.0).transpose(1, 2, 0)


@dataclass
class DomainDataset:
    """An ordered list of images from one domain.

    ``items`` are whatever ``loader`` accepts (paths, or in-memory arrays); the
    loader returns an H×W×3 float image, which is resized to ``image_size``.
    """

    domain: Domain
    items: list
    image_size: int = 256
    loader: Callable[[object], np.ndarray] = field(default=read_rgb, repr=False)

    def __post_init__(self):
        if len(self.items) < 1:
            raise InvalidInput(f"domain {Domain(self.domain).value} dataset is empty")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def size(self) -> int:
        return len(self.items)

    def load(self, i: int) -> np.ndarray:
        img = self.loader(self.items[i])
        if img.shape[:2] != (self.image_size, self.image_size):
            img = resize_bilinear(img, self.image_size, self.image_size)
        return img

    @classmethod
    def from_manifest(cls, path: str | os.PathLike, image_size: int = 256) -> "DomainDataset":
        rows = read_manifest(path)
        base = Path(path).parent
        items = []
        for r in rows:
            p = Path(r["output_path"])
            items.append(p if p.is_absolute() or p.exists() else base / p)
        return cls(Domain.A_fluorescence, items, image_size)

    @classmethod
    def from_directory(
        cls, directory: str | os.PathLike, image_size: int = 256, pattern: str = "*.png"
    ) -> "DomainDataset":
        directory = Path(directory)
        if not directory.is_dir():
            raise NotFound(f"target directory does not exist: {directory}")
        return cls(Domain.B_HE, sorted(directory.glob(pattern)), image_size)

    @classmethod
    def from_arrays(cls, domain: Domain, arrays: Sequence[np.ndarray], image_size: int) -> "DomainDataset":
        return cls(domain, list(arrays), image_size, loader=lambda a: np.asarray(a, dtype=np.float64))


def epoch_pairs(n_a: int, n_b: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Index pairs for one epoch: the larger domain once in shuffled order, the
    smaller one drawn from successive independent shuffles.

    On a size tie domain A plays the role of the larger domain.
    """
    if n_a < 1 or n_b < 1:
        raise InvalidInput(f"both domains need at least one item (got {n_a}, {n_b})")
    a_is_large = n_a >= n_b
    n_large, n_small = (n_a, n_b) if a_is_large else (n_b, n_a)
    large = rng.permutation(n_large)
    small: list[int] = []
    while len(small) < n_large:
        small.extend(rng.permutation(n_small).tolist())
    small = small[:n_large]
    if a_is_large:
        return [(int(i), int(j)) for i, j in zip(large, small)]
    return [(int(i), int(j)) for i, j in zip(small, large)]


def sample_unpaired(
    ds_a: DomainDataset,
    ds_b: DomainDataset,
    rng: np.random.Generator,
    *,
    batch_size: int = 1,
    augment_params: AugmentParams | None = None,
    aug_rng: np.random.Generator | None = None,
    augment_a: bool = True,
    augment_b: bool = True,
) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """Yield (a, b) model-range batches covering one epoch.

    Augmentation draws come from ``aug_rng`` in delivery order (A item, then B
    item, per pair). Without ``augment_params`` images are used as loaded.
    """
    if batch_size < 1:
        raise InvalidInput(f"batch_size must be >= 1, got {batch_size}")
    if augment_params is not None and aug_rng is None:
        raise InvalidInput("augmentation requested without an augmentation stream")
    pairs = epoch_pairs(len(ds_a), len(ds_b), rng)
    for start in range(0, len(pairs), batch_size):
        xs, ys = [], []
        for i, j in pairs[start:start + batch_size]:
            a, b = ds_a.load(i), ds_b.load(j)
            if augment_params is not None:
                a = augment(a, augment_params if augment_a else NO_AUGMENT, aug_rng)
                b = augment(b, augment_params if augment_b else NO_AUGMENT, aug_rng)
            xs.append(to_model_range(a))
            ys.append(to_model_range(b))
        yield torch.cat(xs), torch.cat(ys)


def steps_per_epoch(n_a: int, n_b: int, batch_size: int = 1) -> int:
    return -(-max(n_a, n_b) // batch_size)
