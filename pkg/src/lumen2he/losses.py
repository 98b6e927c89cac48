"""Least-squares adversarial, L1 cycle and identity losses."""
from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import InvalidConfig, InvalidInput

CSV_FIELDS = ("step", "g_adv_a2b", "g_adv_b2a", "cycle_a", "cycle_b", "id_a", "id_b", "g_total", "d_a", "d_b")


@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 10.0
    lambda_identity: float = 5.0

    def __post_init__(self):
        if self.lambda_cycle < 0 or self.lambda_identity < 0:
            raise InvalidConfig(f"loss weights must be non-negative: {self}")


@dataclass
class LossRecord:
    step: int
    g_adv_a2b: float
    g_adv_b2a: float
    cycle_a: float
    cycle_b: float
    id_a: float
    id_b: float
    g_total: float
    d_a: float
    d_b: float

    def as_row(self) -> list[str]:
        # repr() round-trips float64 exactly, so equal runs give byte-equal CSVs.
        return [str(self.step)] + [repr(float(getattr(self, k))) for k in CSV_FIELDS[1:]]

    @classmethod
    def from_row(cls, row) -> "LossRecord":
        return cls(int(row[0]), *(float(v) for v in row[1:]))

    def items(self):
        return asdict(self).items()


def adversarial_loss(pred_map: torch.Tensor, target_real: bool) -> torch.Tensor:
    if pred_map.numel() == 0:
        raise InvalidInput("adversarial loss of an empty prediction map")
    target = 1.0 if target_real else 0.0
    return ((pred_map - target) ** 2).mean()


def l1_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.shape != y.shape:
        raise InvalidInput(f"L1 loss shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def combine(components: dict, w: LossWeights):
    """Weighted generator total from its six components (tensors or floats)."""
    return (
        components["g_adv_a2b"]
        + components["g_adv_b2a"]
        + w.lambda_cycle * (components["cycle_a"] + components["cycle_b"])
        + w.lambda_identity * (components["id_a"] + components["id_b"])
    )


@contextlib.contextmanager
def frozen(*nets: nn.Module):
    """Stop gradients from reaching the parameters of ``nets`` inside the block."""
    saved = [[p.requires_grad for p in n.parameters()] for n in nets]
    try:
        for n in nets:
            n.requires_grad_(False)
        yield
    finally:
        for n, flags in zip(nets, saved):
            for p, f in zip(n.parameters(), flags):
                p.requires_grad_(f)


def generator_objective(bundle, a: torch.Tensor, b: torch.Tensor, w: LossWeights = LossWeights()):
    """Joint generator loss for one batch.

    Returns ``(total, components, fakes)``: ``components`` maps each LossRecord
    generator field to a scalar tensor, ``fakes`` is ``(fake_a, fake_b)``. The
    discriminators are frozen while computing, so backprop touches generators only.
    """
    g_a2b, g_b2a = bundle.g_a2b, bundle.g_b2a
    with frozen(bundle.d_a, bundle.d_b):
        fake_b = g_a2b(a)
        fake_a = g_b2a(b)
        comp = {
            "g_adv_a2b": adversarial_loss(bundle.d_b(fake_b), True),
            "g_adv_b2a": adversarial_loss(bundle.d_a(fake_a), True),
            "cycle_a": l1_loss(g_b2a(fake_b), a),
            "cycle_b": l1_loss(g_a2b(fake_a), b),
        }
        # With a zero identity weight the terms are still reported, but kept off the graph.
        with torch.set_grad_enabled(torch.is_grad_enabled() and w.lambda_identity > 0):
            comp["id_a"] = l1_loss(g_b2a(a), a)
            comp["id_b"] = l1_loss(g_a2b(b), b)
    return combine(comp, w), comp, (fake_a, fake_b)


def discriminator_objective(d: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * (adversarial_loss(d(real), True) + adversarial_loss(d(fake.detach()), False))


def first_nonfinite(values: dict) -> tuple[str, float] | None:
    for k, v in values.items():
        v = v.item() if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            return k, v
    return None
