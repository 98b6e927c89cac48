"""Command-line entry point: ``lumen2he {prepare,train,infer,montage}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import KEYS, RunConfig, echo_config, load_config
from .dataset import DomainDataset
from .errors import ConfigError, LockError, Lumen2HEError
from .fusion import MANIFEST_NAME, canonical_slice_id, prepare
from .infer import MontageSpec, render_epoch_comparison, render_slice_grid, translate_directory
from .trainer import CONFIG_ECHO, fit

log = logging.getLogger("lumen2he")

LOCK_NAME = ".lumen2he.lock"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


@contextlib.contextmanager
def out_dir_lock(out_dir: Path):
    """Refuse to share an output directory with another running invocation."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(
            f"{out_dir} is locked by another lumen2he run ({lock}); remove the lock file if that run is dead"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key: value config file (YAML syntax)")
    g = p.add_argument_group("config overrides (mirror the config-file keys)")
    for k in KEYS:
        g.add_argument(f"--{k.name.replace('_', '-')}", dest=k.name, default=argparse.SUPPRESS,
                       metavar=k.kind.upper(), help=k.help or None)


def _overrides(args) -> dict:
    return {k.name: getattr(args, k.name) for k in KEYS if hasattr(args, k.name)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lumen2he", description="Light-sheet fluorescence to virtual H&E with CycleGAN.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{prepare,train,infer,montage}")

    p = sub.add_parser("prepare", help="fuse C01/C02 TIFF pairs into RGB PNGs plus a manifest")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train the CycleGAN")
    _add_config_flags(p)
    p.add_argument("--manifest", help=f"domain-A manifest (default: OUT_DIR/{MANIFEST_NAME}, created if missing)")
    p.add_argument("--resume", help="continue from this checkpoint (e.g. OUT_DIR/latest.bin)")

    p = sub.add_parser("infer", help="translate every slice pair in a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("montage", help="render figure montages")
    msub = p.add_subparsers(dest="layout", metavar="{grid,epochs}")
    g = msub.add_parser("grid", help="rows of slices, columns C01 | C02 | virtual H&E")
    g.add_argument("--slices", required=True, help="comma-separated slice ids (slice_0001 or 1)")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--input-dir", required=True, help="directory holding the slice TIFFs")
    g.add_argument("--out", required=True)
    e = msub.add_parser("epochs", help="rows of slices, one column per checkpoint")
    e.add_argument("--slices", required=True)
    e.add_argument("--ckpts", required=True, help="comma-separated ckpt_epoch_N.bin paths")
    e.add_argument("--input-dir", required=True)
    e.add_argument("--out", required=True)
    return parser


def _slices(text: str) -> list[str]:
    ids = [canonical_slice_id(t) for t in text.split(",") if t.strip()]
    if not ids:
        raise UsageError("--slices: no slice ids given")
    return ids


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"missing --{name.replace('_', '-')} (flag or config key)")


def cmd_prepare(args) -> None:
    cfg = load_config(args.config, _overrides(args))
    _require(cfg, "source_dir")
    out_dir = Path(cfg.out_dir)
    with out_dir_lock(out_dir):
        echo_config(cfg, out_dir / CONFIG_ECHO)
        manifest = prepare(cfg.source_dir, out_dir, *cfg.percentiles, scope=cfg.normalize_scope)
    print(manifest)


def cmd_train(args) -> None:
    cfg = load_config(args.config, _overrides(args))
    _require(cfg, "target_dir")
    out_dir = Path(cfg.out_dir)
    with out_dir_lock(out_dir):
        manifest = Path(args.manifest) if args.manifest else out_dir / MANIFEST_NAME
        if not manifest.is_file():
            _require(cfg, "source_dir")
            log.info("no manifest at %s; preparing domain A from %s", manifest, cfg.source_dir)
            manifest = prepare(cfg.source_dir, out_dir, *cfg.percentiles, scope=cfg.normalize_scope)
        ds_a = DomainDataset.from_manifest(manifest, cfg.image_size)
        ds_b = DomainDataset.from_directory(cfg.target_dir, cfg.image_size)
        latest = fit(
            cfg.train,
            ds_a,
            ds_b,
            out_dir,
            gen_cfg=cfg.generator,
            disc_cfg=cfg.discriminator,
            augment_params=cfg.augment,
            augment_a=cfg.augment_a,
            augment_b=cfg.augment_b,
            resume=args.resume,
            run_config=cfg.to_flat(),
        )
    print(latest)


def cmd_infer(args) -> None:
    out_dir = Path(args.out_dir)
    with out_dir_lock(out_dir):
        written = translate_directory(args.ckpt, args.input_dir, out_dir)
    print(f"wrote {len(written)} images to {out_dir}")


def cmd_montage(args) -> None:
    if args.layout == "grid":
        spec = MontageSpec(rows=_slices(args.slices), columns=["c01", "c02", args.ckpt])
        render_slice_grid(spec, args.input_dir, args.out)
    elif args.layout == "epochs":
        ckpts = [c.strip() for c in args.ckpts.split(",") if c.strip()]
        if not ckpts:
            raise UsageError("--ckpts: no checkpoints given")
        render_epoch_comparison(_slices(args.slices), ckpts, args.out, args.input_dir)
    else:
        raise UsageError("montage needs a layout: grid or epochs")
    print(args.out)


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "infer": cmd_infer, "montage": cmd_montage}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"lumen2he {args.command}: {exc}", file=sys.stderr)
        return 1
    except (Lumen2HEError, OSError) as exc:
        print(f"lumen2he {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
