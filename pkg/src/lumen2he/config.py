"""Run configuration: a flat ``key: value`` file (YAML syntax) plus ``--kebab-case`` flag overrides.

Precedence, lowest to highest: built-in defaults, config file, command-line flags.
The resolved configuration is echoed as JSON (same flat keys), which is itself a
valid config file.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset import AugmentParams
from .errors import ConfigError, Lumen2HEError
from .losses import LossWeights
from .models import DiscriminatorConfig, GeneratorConfig
from .trainer import TrainConfig

OUT_ENV = "LUMEN2HE_OUT"


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int | float | bool | str | path | percentiles | opt_int | choice
    default: Any
    help: str = ""
    choices: tuple = ()


_G, _D, _T, _A = GeneratorConfig(), DiscriminatorConfig(), TrainConfig(), AugmentParams()

KEYS = [
    Key("source_dir", "path", None, "directory of slice_XXXX_c01/c02 TIFFs"),
    Key("target_dir", "path", None, "directory of H&E *.png images (domain B)"),
    Key("out_dir", "path", None, f"output directory (default ${OUT_ENV} or ./runs)"),
    Key("seed", "int", 42, "master seed for all random streams"),
    Key("percentiles", "percentiles", (1.0, 99.0), "robust-normalization percentile window p_low,p_high"),
    Key("normalize_scope", "choice", "slice", "percentile statistics per slice or over the whole dataset",
        ("slice", "dataset")),
    Key("image_size", "int", 256, "square training/inference resolution (bilinear resize)"),
    Key("flip_h_prob", "float", _A.flip_h_prob),
    Key("flip_v_prob", "float", _A.flip_v_prob),
    Key("brightness_delta", "float", _A.brightness_delta),
    Key("contrast_delta", "float", _A.contrast_delta),
    Key("augment_a", "bool", True, "augment fluorescence (A) images"),
    Key("augment_b", "bool", True, "augment H&E (B) images"),
    Key("base_filters", "int", _G.base_filters, "generator width after the first conv"),
    Key("n_residual_blocks", "int", _G.n_residual_blocks),
    Key("downsample_stages", "int", _G.downsample_stages),
    Key("disc_base_filters", "int", _D.base_filters),
    Key("disc_downsample_stages", "int", _D.downsample_stages),
    Key("leaky_slope", "float", _D.leaky_slope),
    Key("epochs", "int", _T.epochs),
    Key("batch_size", "int", _T.batch_size),
    Key("lr", "float", _T.lr),
    Key("adam_beta1", "float", _T.adam_beta1),
    Key("adam_beta2", "float", _T.adam_beta2),
    Key("decay_start_epoch", "int", _T.decay_start_epoch),
    Key("checkpoint_every", "int", _T.checkpoint_every),
    Key("buffer_size", "int", _T.buffer_size, "replay-buffer capacity; 0 disables the buffer"),
    Key("max_steps", "opt_int", None, "stop after this many steps in total"),
    Key("lambda_cycle", "float", _T.weights.lambda_cycle),
    Key("lambda_identity", "float", _T.weights.lambda_identity),
]
KEY_INDEX = {k.name: k for k in KEYS}


@dataclass(frozen=True)
class RunConfig:
    source_dir: str | None = None
    target_dir: str | None = None
    out_dir: str | None = None
    seed: int = 42
    percentiles: tuple[float, float] = (1.0, 99.0)
    normalize_scope: str = "slice"
    image_size: int = 256
    augment_a: bool = True
    augment_b: bool = True
    augment: AugmentParams = field(default_factory=AugmentParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        f = flat
        try:
            return cls(
                source_dir=f["source_dir"],
                target_dir=f["target_dir"],
                out_dir=f["out_dir"],
                seed=f["seed"],
                percentiles=tuple(f["percentiles"]),
                normalize_scope=f["normalize_scope"],
                image_size=f["image_size"],
                augment_a=f["augment_a"],
                augment_b=f["augment_b"],
                augment=AugmentParams(f["flip_h_prob"], f["flip_v_prob"], f["brightness_delta"], f["contrast_delta"]),
                generator=GeneratorConfig(3, f["base_filters"], f["n_residual_blocks"], f["downsample_stages"]),
                discriminator=DiscriminatorConfig(3, f["disc_base_filters"], f["disc_downsample_stages"],
                                                  f["leaky_slope"]),
                train=TrainConfig(
                    epochs=f["epochs"],
                    batch_size=f["batch_size"],
                    lr=f["lr"],
                    adam_beta1=f["adam_beta1"],
                    adam_beta2=f["adam_beta2"],
                    decay_start_epoch=f["decay_start_epoch"],
                    checkpoint_every=f["checkpoint_every"],
                    seed=f["seed"],
                    weights=LossWeights(f["lambda_cycle"], f["lambda_identity"]),
                    buffer_size=f["buffer_size"],
                    max_steps=f["max_steps"],
                ),
            )
        except Lumen2HEError as exc:
            raise ConfigError(str(exc)) from exc

    def to_flat(self) -> dict:
        t, g, d, a = self.train, self.generator, self.discriminator, self.augment
        return {
            "source_dir": self.source_dir,
            "target_dir": self.target_dir,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "percentiles": list(self.percentiles),
            "normalize_scope": self.normalize_scope,
            "image_size": self.image_size,
            **dataclasses.asdict(a),
            "augment_a": self.augment_a,
            "augment_b": self.augment_b,
            "base_filters": g.base_filters,
            "n_residual_blocks": g.n_residual_blocks,
            "downsample_stages": g.downsample_stages,
            "disc_base_filters": d.base_filters,
            "disc_downsample_stages": d.downsample_stages,
            "leaky_slope": d.leaky_slope,
            "epochs": t.epochs,
            "batch_size": t.batch_size,
            "lr": t.lr,
            "adam_beta1": t.adam_beta1,
            "adam_beta2": t.adam_beta2,
            "decay_start_epoch": t.decay_start_epoch,
            "checkpoint_every": t.checkpoint_every,
            "buffer_size": t.buffer_size,
            "max_steps": t.max_steps,
            "lambda_cycle": t.weights.lambda_cycle,
            "lambda_identity": t.weights.lambda_identity,
        }


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def check_value(key: Key, v):
    """Validate a value parsed from a config file and normalize its type."""
    bad = ConfigError(f"config key {key.name!r}: expected {key.kind}, got {v!r} ({type(v).__name__})")
    if key.kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise bad
        return v
    if key.kind == "opt_int":
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise bad
        return v
    if key.kind == "float":
        if not _is_number(v):
            raise bad
        return float(v)
    if key.kind == "bool":
        if not isinstance(v, bool):
            raise bad
        return v
    if key.kind in ("str", "choice"):
        if not isinstance(v, str):
            raise bad
        if key.choices and v not in key.choices:
            raise ConfigError(f"config key {key.name!r}: {v!r} not one of {key.choices}")
        return v
    if key.kind == "path":
        if v is None:
            return None
        if not isinstance(v, (str, os.PathLike)):
            raise bad
        return str(v)
    if key.kind == "percentiles":
        if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(_is_number(x) for x in v):
            raise bad
        return (float(v[0]), float(v[1]))
    raise AssertionError(key.kind)


def parse_flag(key: Key, text: str):
    """Parse a command-line string for ``key``."""
    try:
        if key.kind == "int":
            return int(text)
        if key.kind == "opt_int":
            return None if text.lower() in ("none", "") else int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key.kind == "percentiles":
            lo, hi = text.split(",")
            return (float(lo), float(hi))
        return check_value(key, text)
    except ValueError as exc:
        raise ConfigError(f"flag --{key.name.replace('_', '-')}: cannot parse {text!r} as {key.kind}") from exc


def defaults() -> dict:
    flat = {k.name: k.default for k in KEYS}
    flat["out_dir"] = os.environ.get(OUT_ENV, "runs")
    return flat


def read_config_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not a valid key-value config: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of keys to values")
    return data


def load_config(
    path: str | os.PathLike | None = None,
    overrides: dict | None = None,
    echo_to: str | os.PathLike | None = None,
) -> RunConfig:
    """Resolve defaults <- file <- overrides.

    ``overrides`` maps key names to either already-typed values or raw flag strings.
    With ``echo_to``, the resolved flat config is written there as JSON.
    """
    flat = defaults()
    layers = [read_config_file(path) if path is not None else {}, overrides or {}]
    for i, layer in enumerate(layers):
        for name, value in layer.items():
            name = name.replace("-", "_")
            key = KEY_INDEX.get(name)
            if key is None:
                raise ConfigError(f"unknown config key {name!r}")
            if i == 1 and isinstance(value, str) and key.kind not in ("str", "path", "choice"):
                value = parse_flag(key, value)
            flat[name] = check_value(key, value)
    cfg = RunConfig.from_flat(flat)
    if echo_to is not None:
        echo_config(cfg, echo_to)
    return cfg


def echo_config(cfg: RunConfig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_flat(), indent=2) + "\n")
    return path
