"""ResNet encoder-decoder generator and PatchGAN discriminator."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import InvalidConfig, InvalidInput

INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_filters: int = 64
    n_residual_blocks: int = 9
    downsample_stages: int = 2

    def __post_init__(self):
        if self.in_channels < 1 or self.base_filters < 1:
            raise InvalidConfig(f"generator needs in_channels >= 1 and base_filters >= 1: {self}")
        if self.n_residual_blocks < 0 or self.downsample_stages < 0:
            raise InvalidConfig(f"generator block/stage counts must be non-negative: {self}")

    @property
    def bottleneck_width(self) -> int:
        return self.base_filters * 2 ** self.downsample_stages


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    base_filters: int = 64
    downsample_stages: int = 3
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.in_channels < 1 or self.base_filters < 1 or self.downsample_stages < 1:
            raise InvalidConfig(f"discriminator sizes must be positive: {self}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise InvalidConfig(f"leaky_slope must lie in [0, 1): {self.leaky_slope}")

    @property
    def final_width(self) -> int:
        return self.base_filters * 2 ** (self.downsample_stages - 1)


def _instance_norm(ch: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(ch, affine=False, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            _instance_norm(ch),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            _instance_norm(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    """c7s1-64, d128, d256, R256 x n, u128, u64, c7s1-3 (at default widths)."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        f = cfg.base_filters
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, f, 7),
            _instance_norm(f),
            nn.ReLU(True),
        ]
        for i in range(cfg.downsample_stages):
            c_in, c_out = f * 2**i, f * 2 ** (i + 1)
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, padding_mode="reflect"),
                _instance_norm(c_out),
                nn.ReLU(True),
            ]
        width = cfg.bottleneck_width
        self.encoder = nn.Sequential(*layers)
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(cfg.n_residual_blocks)])
        layers = []
        for i in range(cfg.downsample_stages, 0, -1):
            c_in, c_out = f * 2**i, f * 2 ** (i - 1)
            layers += [
                nn.ConvTranspose2d(c_in, c_out, 3, stride=2, padding=1, output_padding=1),
                _instance_norm(c_out),
                nn.ReLU(True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(f, cfg.in_channels, 7), nn.Tanh()]
        self.decoder = nn.Sequential(*layers)

    @property
    def in_channels(self) -> int:
        return self.cfg.in_channels

    def forward(self, x):
        return self.decoder(self.blocks(self.encoder(x)))


class PatchDiscriminator(nn.Module):
    """4x4 conv stack ending in a 1-channel map of per-patch realness scores."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        f, slope = cfg.base_filters, cfg.leaky_slope
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.in_channels, f, 4, stride=2, padding=1),
            nn.LeakyReLU(slope, True),
        ]
        for i in range(1, cfg.downsample_stages):
            c_in, c_out = f * 2 ** (i - 1), f * 2**i
            layers += [
                nn.Conv2d(c_in, c_out, 4, stride=2, padding=1),
                _instance_norm(c_out),
                nn.LeakyReLU(slope, True),
            ]
        layers += [nn.Conv2d(cfg.final_width, 1, 4, stride=1, padding=1)]
        self.model = nn.Sequential(*layers)

    @property
    def in_channels(self) -> int:
        return self.cfg.in_channels

    def forward(self, x):
        return self.model(x)


def init_weights(net: nn.Module, generator: torch.Generator | None = None) -> nn.Module:
    """Conv weights ~ Normal(0, 0.02), biases 0, in module registration order."""
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(m.weight, 0.0, INIT_STD, generator=generator)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
    return net


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), rng: torch.Generator | None = None) -> ResnetGenerator:
    if not isinstance(cfg, GeneratorConfig):
        raise InvalidConfig(f"expected GeneratorConfig, got {type(cfg).__name__}")
    return init_weights(ResnetGenerator(cfg), rng)


def build_discriminator(
    cfg: DiscriminatorConfig = DiscriminatorConfig(), rng: torch.Generator | None = None
) -> PatchDiscriminator:
    if not isinstance(cfg, DiscriminatorConfig):
        raise InvalidConfig(f"expected DiscriminatorConfig, got {type(cfg).__name__}")
    return init_weights(PatchDiscriminator(cfg), rng)


def discriminator_output_size(n: int, downsample_stages: int = 3) -> int:
    for _ in range(downsample_stages):
        n = (n + 2 - 4) // 2 + 1
    return n + 2 - 4 + 1


def forward(net: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Run ``net`` on a N×C×H×W batch after checking the input layout."""
    if not isinstance(x, torch.Tensor) or x.ndim != 4:
        raise InvalidInput(f"expected a 4-D N×C×H×W tensor, got {getattr(x, 'shape', type(x))}")
    if x.shape[1] != net.in_channels:
        raise InvalidInput(f"input has {x.shape[1]} channels, network expects {net.in_channels}")
    if isinstance(net, ResnetGenerator):
        k = 2**net.cfg.downsample_stages
        if x.shape[2] % k or x.shape[3] % k:
            raise InvalidInput(f"generator input H, W must be divisible by {k}, got {tuple(x.shape[2:])}")
    elif isinstance(net, PatchDiscriminator):
        if discriminator_output_size(min(x.shape[2:]), net.cfg.downsample_stages) < 1:
            raise InvalidInput(f"input {tuple(x.shape[2:])} too small for the discriminator")
    return net(x)
