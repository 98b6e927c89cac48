import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from lumen2he import cli
from lumen2he.config import KEYS, defaults, load_config
from lumen2he.errors import ConfigError
from lumen2he.fusion import fuse_pair, load_pair
from lumen2he.imageio import quantize8
from lumen2he.models import DiscriminatorConfig, GeneratorConfig
from lumen2he.trainer import TrainConfig
from synth import write_source_dir, write_target_dir


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg == load_config()
    assert cfg.train == TrainConfig()
    assert cfg.generator == GeneratorConfig() and cfg.discriminator == DiscriminatorConfig()
    assert cfg.percentiles == (1.0, 99.0) and cfg.image_size == 256 and cfg.seed == 42


def test_flag_overrides_file(tmp_path):
    (tmp_path / "c.yaml").write_text("lr: 0.001\nepochs: 7\ndecay_start_epoch: 3\n")
    cfg = load_config(tmp_path / "c.yaml", {"lr": "0.0005"})
    assert cfg.train.lr == 0.0005 and cfg.train.epochs == 7


def test_percentiles_echoed(tmp_path):
    cfg = load_config(None, {"percentiles": "2,98"}, echo_to=tmp_path / "echo.json")
    assert cfg.percentiles == (2.0, 98.0)
    echoed = json.loads((tmp_path / "echo.json").read_text())
    assert echoed["percentiles"] == [2.0, 98.0]
    assert set(echoed) == {k.name for k in KEYS}
    # The echo is itself a valid config file.
    assert load_config(tmp_path / "echo.json") == cfg


@pytest.mark.parametrize("text", ["bogus_key: 3\n", "epochs: ten\n", "lr: true\n", "percentiles: [1]\n",
                                  "normalize_scope: global\n", "- a list\n", "decay_start_epoch: 500\n"])
def test_bad_config_files(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


def test_bad_flag_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"epochs": "x"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_out_dir_env(monkeypatch):
    monkeypatch.setenv("LUMEN2HE_OUT", "/tmp/somewhere")
    assert defaults()["out_dir"] == "/tmp/somewhere"
    monkeypatch.delenv("LUMEN2HE_OUT")
    assert defaults()["out_dir"] == "runs"


def test_help_lists_subcommands(capsys):
    assert cli.main(["--help"]) == 0
    text = capsys.readouterr().out
    for name in ("prepare", "train", "infer", "montage"):
        assert name in text


def test_usage_errors_exit_1(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main([]) == 1
    assert cli.main(["train", "--epochs", "3", "--out-dir", "x"]) == 1  # decay start beyond epochs
    assert cli.main(["train", "--out-dir", "x"]) == 1  # no target dir
    assert cli.main(["montage", "grid", "--slices", "1"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lumen2he", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "montage" in r.stdout


def test_prepare_dispatch(tmp_path, capsys):
    write_source_dir(tmp_path / "src", 2, size=16)
    code = cli.main(["prepare", "--source-dir", str(tmp_path / "src"), "--out-dir", str(tmp_path / "out"),
                     "--percentiles", "2,98"])
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "out" / "fused").iterdir()) == [
        "slice_0001_fused.png", "slice_0002_fused.png"]
    assert json.loads((tmp_path / "out" / "train_config.json").read_text())["percentiles"] == [2.0, 98.0]
    fused = np.asarray(Image.open(tmp_path / "out" / "fused" / "slice_0001_fused.png"))
    np.testing.assert_array_equal(fused, quantize8(fuse_pair(load_pair(tmp_path / "src", "1"), 2.0, 98.0)))
    assert not (tmp_path / "out" / cli.LOCK_NAME).exists()


def test_runtime_error_exit_2(tmp_path):
    assert cli.main(["prepare", "--source-dir", str(tmp_path / "nothing"), "--out-dir", str(tmp_path / "o")]) == 2


def test_lock_refuses_second_run(tmp_path, capsys):
    write_source_dir(tmp_path / "src", 1, size=16)
    out = tmp_path / "out"
    out.mkdir()
    (out / cli.LOCK_NAME).write_text("123")
    assert cli.main(["prepare", "--source-dir", str(tmp_path / "src"), "--out-dir", str(out)]) == 2
    assert "locked" in capsys.readouterr().err
    assert not (out / "manifest.tsv").exists()


def test_train_dispatch_auto_prepares(tmp_path):
    write_source_dir(tmp_path / "src", 2, size=20)
    write_target_dir(tmp_path / "he", 2, size=20)
    out = tmp_path / "run"
    args = ["train", "--source-dir", str(tmp_path / "src"), "--target-dir", str(tmp_path / "he"),
            "--out-dir", str(out), "--image-size", "16", "--base-filters", "4", "--n-residual-blocks", "1",
            "--disc-base-filters", "4", "--epochs", "2", "--decay-start-epoch", "1", "--checkpoint-every", "1"]
    assert cli.main(args) == 0
    assert (out / "manifest.tsv").is_file() and (out / "ckpt_epoch_2.bin").is_file()
    with open(out / "losses.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 2 * 2
    assert json.loads((out / "train_config.json").read_text())["image_size"] == 16

    vhe = tmp_path / "vhe"
    assert cli.main(["infer", "--ckpt", str(out / "latest.bin"), "--input-dir", str(tmp_path / "src"),
                     "--out-dir", str(vhe)]) == 0
    assert len(list(vhe.glob("*_vhe.png"))) == 2
    assert cli.main(["montage", "epochs", "--slices", "1,2", "--ckpts",
                     f"{out / 'ckpt_epoch_2.bin'},{out / 'ckpt_epoch_1.bin'}",
                     "--input-dir", str(tmp_path / "src"), "--out", str(tmp_path / "e.png")]) == 0
    assert cli.main(["montage", "grid", "--slices", "7", "--ckpt", str(out / "latest.bin"),
                     "--input-dir", str(tmp_path / "src"), "--out", str(tmp_path / "g.png")]) == 2
