"""CycleGAN optimization loop: joint generator step, replay-buffered discriminator
steps, linear LR decay, periodic checkpoints and a per-step loss log."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import seeding
from .dataset import AugmentParams, DomainDataset, sample_unpaired, steps_per_epoch
from .errors import CheckpointError, DivergenceError, InvalidConfig, InvalidInput, VersionError
from .losses import CSV_FIELDS, LossRecord, LossWeights, discriminator_objective, first_nonfinite, generator_objective
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    ResnetGenerator,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lumen2he-ckpt-v1"
LOSSES_CSV = "losses.csv"
LATEST = "latest.bin"
CONFIG_ECHO = "train_config.json"


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_epoch_{epoch}.bin"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    decay_start_epoch: int = 50
    checkpoint_every: int = 20
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    buffer_size: int = 50
    # Stop after this many optimizer steps in total (None: run every epoch).
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig(f"epochs and batch_size must be >= 1: {self}")
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise InvalidConfig(f"decay_start_epoch {self.decay_start_epoch} outside [0, {self.epochs}]")
        if self.checkpoint_every < 1:
            raise InvalidConfig(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.lr < 0 or self.buffer_size < 0:
            raise InvalidConfig("lr and buffer_size must be non-negative")
        if self.max_steps is not None and self.max_steps < 0:
            raise InvalidConfig(f"max_steps must be non-negative, got {self.max_steps}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant LR until ``decay_start_epoch``, then linear decay hitting 0 at ``epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise InvalidInput(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch < cfg.decay_start_epoch:
        return cfg.lr
    span = cfg.epochs - cfg.decay_start_epoch
    if span == 0:
        return 0.0
    return cfg.lr * (cfg.epochs - epoch) / span


@dataclass
class ReplayBuffer:
    capacity: int = 50
    items: list = field(default_factory=list)


def buffer_exchange(buf: ReplayBuffer, img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Pool one fake image (1×C×H×W); may hand back an older fake instead.

    Until full, every image is stored and returned. Once full, a draw u < 0.5
    swaps the image with a uniformly chosen stored one; otherwise the image is
    returned and the pool is untouched.
    """
    if buf.capacity == 0:
        return img
    img = img.detach()
    if len(buf.items) < buf.capacity:
        buf.items.append(img.clone())
        return img
    if rng.random() < 0.5:
        idx = int(rng.integers(0, buf.capacity))
        old = buf.items[idx]
        buf.items[idx] = img.clone()
        return old
    return img


def buffer_query(buf: ReplayBuffer, batch: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return torch.cat([buffer_exchange(buf, batch[i:i + 1], rng) for i in range(batch.shape[0])])


@dataclass
class CycleGanBundle:
    g_a2b: ResnetGenerator
    g_b2a: ResnetGenerator
    d_a: PatchDiscriminator
    d_b: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d_a: torch.optim.Optimizer
    opt_d_b: torch.optim.Optimizer
    epoch: int = 0
    step: int = 0

    def networks(self) -> dict[str, nn.Module]:
        return {"g_a2b": self.g_a2b, "g_b2a": self.g_b2a, "d_a": self.d_a, "d_b": self.d_b}

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"opt_g": self.opt_g, "opt_d_a": self.opt_d_a, "opt_d_b": self.opt_d_b}

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers().values():
            for group in opt.param_groups:
                group["lr"] = lr


def create_bundle(
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
    cfg: TrainConfig = TrainConfig(),
    dtype: torch.dtype = torch.float32,
) -> CycleGanBundle:
    """Four freshly initialized networks plus their Adam optimizers.

    Weights come from the ``init`` stream, drawn in the order G_A2B, G_B2A, D_A, D_B.
    """
    g = seeding.torch_generator(cfg.seed, "init")
    g_a2b = build_generator(gen_cfg, g).to(dtype)
    g_b2a = build_generator(gen_cfg, g).to(dtype)
    d_a = build_discriminator(disc_cfg, g).to(dtype)
    d_b = build_discriminator(disc_cfg, g).to(dtype)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(list(g_a2b.parameters()) + list(g_b2a.parameters()), lr=cfg.lr, betas=betas)
    opt_d_a = torch.optim.Adam(d_a.parameters(), lr=cfg.lr, betas=betas)
    opt_d_b = torch.optim.Adam(d_b.parameters(), lr=cfg.lr, betas=betas)
    return CycleGanBundle(g_a2b, g_b2a, d_a, d_b, opt_g, opt_d_a, opt_d_b)


def _check_finite(values: dict, step: int) -> None:
    bad = first_nonfinite(values)
    if bad is not None:
        raise DivergenceError(bad[0], bad[1], step)


def generator_update(bundle: CycleGanBundle, a: torch.Tensor, b: torch.Tensor, w: LossWeights, step: int):
    """Joint step of G_A2B and G_B2A. Returns (total, components, (fake_a, fake_b))."""
    bundle.opt_g.zero_grad(set_to_none=True)
    g_total, comp, fakes = generator_objective(bundle, a, b, w)
    _check_finite({**comp, "g_total": g_total}, step)
    g_total.backward()
    bundle.opt_g.step()
    return g_total, comp, fakes


def discriminator_update(d: nn.Module, opt: torch.optim.Optimizer, real, fake, name: str, step: int):
    opt.zero_grad(set_to_none=True)
    loss = discriminator_objective(d, real, fake)
    _check_finite({name: loss}, step)
    loss.backward()
    opt.step()
    return loss


def train_step(
    bundle: CycleGanBundle,
    a: torch.Tensor,
    b: torch.Tensor,
    bufs: tuple[ReplayBuffer, ReplayBuffer],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> LossRecord:
    """One update of both generators, then D_A, then D_B.

    ``bufs`` is (pool of fake A images, pool of fake B images); ``rng`` is the
    buffer stream. Raises DivergenceError before any update that would apply a
    non-finite loss.
    """
    step = bundle.step + 1
    for net in bundle.networks().values():
        net.train()

    g_total, comp, (fake_a, fake_b) = generator_update(bundle, a, b, cfg.weights, step)

    pool_a, pool_b = bufs
    fake_a = buffer_query(pool_a, fake_a.detach(), rng)
    fake_b = buffer_query(pool_b, fake_b.detach(), rng)

    d_a = discriminator_update(bundle.d_a, bundle.opt_d_a, a, fake_a, "d_a", step)
    d_b = discriminator_update(bundle.d_b, bundle.opt_d_b, b, fake_b, "d_b", step)

    bundle.step = step
    return LossRecord(
        step=step,
        **{k: v.item() for k, v in comp.items()},
        g_total=g_total.item(),
        d_a=d_a.item(),
        d_b=d_b.item(),
    )


# ---------------------------------------------------------------- checkpoints

def _config_dict(cfg: TrainConfig, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, run: dict | None):
    return {
        "train": dataclasses.asdict(cfg),
        "generator": dataclasses.asdict(gen_cfg),
        "discriminator": dataclasses.asdict(disc_cfg),
        "run": run,
    }


def save_checkpoint(
    path: str | os.PathLike,
    bundle: CycleGanBundle,
    config: dict,
    bufs: tuple[ReplayBuffer, ReplayBuffer] | None = None,
    rng: np.random.Generator | None = None,
    epoch_step: int = 0,
) -> Path:
    """Write every piece of training state to one archive, atomically."""
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": bundle.epoch,
        "step": bundle.step,
        "epoch_step": epoch_step,
        "config": json.dumps(config),
        "networks": {k: n.state_dict() for k, n in bundle.networks().items()},
        "optimizers": {k: o.state_dict() for k, o in bundle.optimizers().items()},
        "buffers": None if bufs is None else [{"capacity": p.capacity, "items": list(p.items)} for p in bufs],
        "buffer_rng": None if rng is None else json.dumps(rng.bit_generator.state),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format" not in payload:
        raise CheckpointError(f"{path} is not a lumen2he checkpoint")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise VersionError(f"{path}: format {payload['format']!r}, expected {CHECKPOINT_FORMAT!r}")
    payload["config"] = json.loads(payload["config"])
    return payload


def configs_from_checkpoint(payload: dict) -> tuple[TrainConfig, GeneratorConfig, DiscriminatorConfig]:
    c = payload["config"]
    return TrainConfig.from_dict(c["train"]), GeneratorConfig(**c["generator"]), DiscriminatorConfig(**c["discriminator"])


def restore(payload: dict, dtype: torch.dtype = torch.float32):
    """Rebuild (bundle, buffers, buffer rng) exactly as they were when saved."""
    cfg, gen_cfg, disc_cfg = configs_from_checkpoint(payload)
    bundle = create_bundle(gen_cfg, disc_cfg, cfg, dtype)
    try:
        for k, net in bundle.networks().items():
            net.load_state_dict(payload["networks"][k])
        for k, opt in bundle.optimizers().items():
            opt.load_state_dict(payload["optimizers"][k])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"checkpoint state does not match its config: {exc}") from exc
    bundle.epoch = int(payload["epoch"])
    bundle.step = int(payload["step"])
    bufs = None
    if payload.get("buffers") is not None:
        bufs = tuple(ReplayBuffer(p["capacity"], list(p["items"])) for p in payload["buffers"])
    rng = None
    if payload.get("buffer_rng") is not None:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = json.loads(payload["buffer_rng"])
    return bundle, bufs, rng


def load_generator(path: str | os.PathLike, which: str = "g_a2b") -> ResnetGenerator:
    payload = load_checkpoint(path)
    _, gen_cfg, _ = configs_from_checkpoint(payload)
    net = ResnetGenerator(gen_cfg)
    try:
        net.load_state_dict(payload["networks"][which])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: cannot load {which}: {exc}") from exc
    return net.eval()


# ----------------------------------------------------------------------- loop

def _truncate_log(path: Path, last_step: int) -> None:
    """Drop rows logged after ``last_step`` (steps of an interrupted epoch)."""
    if not path.is_file():
        _start_log(path)
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [r for r in rows[1:] if r and int(r[0]) <= last_step]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerows(kept)


def _start_log(path: Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(CSV_FIELDS)


def fit(
    cfg: TrainConfig,
    ds_a: DomainDataset,
    ds_b: DomainDataset,
    out_dir: str | os.PathLike,
    *,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
    augment_params: AugmentParams | None = AugmentParams(),
    augment_a: bool = True,
    augment_b: bool = True,
    resume: str | os.PathLike | None = None,
    run_config: dict | None = None,
) -> Path:
    """Train for ``cfg.epochs`` epochs (or ``cfg.max_steps`` steps) and return the latest checkpoint.

    Writes ``ckpt_epoch_{N}.bin`` every ``cfg.checkpoint_every`` epochs, ``latest.bin``
    after every epoch and when stopping early, and one ``losses.csv`` row per step.
    With ``resume`` the run continues from that checkpoint's exact position.
    """
    if ds_a.image_size != ds_b.image_size:
        raise InvalidInput(f"domain image sizes differ: {ds_a.image_size} vs {ds_b.image_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _config_dict(cfg, gen_cfg, disc_cfg, run_config)
    with open(out_dir / CONFIG_ECHO, "w") as fh:
        json.dump(run_config if run_config is not None else config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    log_path = out_dir / LOSSES_CSV
    skip = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        bundle, bufs, rng = restore(payload)
        skip = int(payload.get("epoch_step", 0))
        if bufs is None or rng is None:
            raise CheckpointError(f"{resume} carries no replay-buffer state; cannot resume exactly")
        _truncate_log(log_path, bundle.step)
        log.info("resuming at epoch %d, step %d", bundle.epoch + 1, bundle.step)
    else:
        bundle = create_bundle(gen_cfg, disc_cfg, cfg)
        bufs = (ReplayBuffer(cfg.buffer_size), ReplayBuffer(cfg.buffer_size))
        rng = seeding.stream(cfg.seed, "buffer")
        _start_log(log_path)

    per_epoch = steps_per_epoch(len(ds_a), len(ds_b), cfg.batch_size)
    latest = out_dir / LATEST
    with open(log_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for epoch_idx in range(bundle.epoch, cfg.epochs):
            bundle.set_lr(lr_at(epoch_idx, cfg))
            batches = sample_unpaired(
                ds_a,
                ds_b,
                seeding.stream(cfg.seed, "data", epoch_idx),
                batch_size=cfg.batch_size,
                augment_params=augment_params,
                aug_rng=seeding.stream(cfg.seed, "augment", epoch_idx),
                augment_a=augment_a,
                augment_b=augment_b,
            )
            done = 0
            for a, b in batches:
                if done < skip:
                    done += 1
                    continue
                if cfg.max_steps is not None and bundle.step >= cfg.max_steps:
                    save_checkpoint(latest, bundle, config, bufs, rng, epoch_step=done)
                    log.info("stopped at max_steps=%d", cfg.max_steps)
                    return latest
                rec = train_step(bundle, a, b, bufs, cfg, rng)
                writer.writerow(rec.as_row())
                fh.flush()
                done += 1
            skip = 0
            bundle.epoch = epoch_idx + 1
            log.info("epoch %d/%d done (%d steps, step %d)", bundle.epoch, cfg.epochs, per_epoch, bundle.step)
            if bundle.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / checkpoint_name(bundle.epoch), bundle, config, bufs, rng)
            save_checkpoint(latest, bundle, config, bufs, rng)
    return latest
