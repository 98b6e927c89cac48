"""Independent random streams derived from one master seed.

Each consumer gets its own stream keyed by a fixed label, so changing how many
draws one consumer makes never shifts another consumer's sequence.

Labels: ``data`` (epoch shuffles), ``augment`` (flip/jitter draws),
``buffer`` (replay-buffer swaps), ``init`` (network weights).
"""
from __future__ import annotations

import zlib

import numpy as np
import torch

STREAM_LABELS = ("data", "augment", "buffer", "init")


def label_key(label: str) -> int:
    if label not in STREAM_LABELS:
        raise KeyError(f"unknown stream label {label!r}; expected one of {STREAM_LABELS}")
    return zlib.crc32(label.encode("ascii"))


def stream(seed: int, label: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(label_key(label), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))


def torch_generator(seed: int, label: str = "init", *keys: int) -> torch.Generator:
    """A torch CPU generator seeded from the numpy stream for ``label``."""
    g = torch.Generator(device="cpu")
    g.manual_seed(int(stream(seed, label, *keys).integers(0, 2**63 - 1)))
    return g
