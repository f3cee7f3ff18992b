import json
import os

import numpy as np
import pytest
import torch

from repdistill.cli import main, resolve_config, build_parser
from repdistill.data import NormStats
from repdistill.errors import DataLoadError
from repdistill.match import random_synthetic
from repdistill.persist import (
    config_hash,
    denormalize_to_uint8,
    load_syn,
    save_png_grid,
    save_syn,
)


@pytest.fixture()
def stats():
    return NormStats(mean=np.array([0.5], dtype=np.float32),
                     std=np.array([0.25], dtype=np.float32))


# ------------------------------------------------------------------ persist

def test_syn_roundtrip_bit_identical(tmp_path, blob_ds, stats):
    syn = random_synthetic(blob_ds, 2, seed=0)
    syn.update_count = 17
    path = tmp_path / "syn.bin"
    save_syn(path, syn, stats, extra={"config_hash": "deadbeef"})
    loaded, header = load_syn(path)
    assert loaded.images.detach().numpy().tobytes() == syn.images.detach().numpy().tobytes()
    assert loaded.labels.tolist() == syn.labels.tolist()
    assert loaded.ipc == 2 and loaded.update_count == 17
    assert header["config_hash"] == "deadbeef"
    assert header["mean"] == [0.5] and header["std"] == [0.25]
    # saving the loaded set again reproduces the file byte for byte
    path2 = tmp_path / "again.bin"
    save_syn(path2, loaded, stats, extra={"config_hash": "deadbeef"})
    assert path.read_bytes() == path2.read_bytes()


def test_syn_truncated_payload(tmp_path, blob_ds, stats):
    syn = random_synthetic(blob_ds, 1, seed=0)
    path = tmp_path / "syn.bin"
    save_syn(path, syn, stats)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataLoadError):
        load_syn(path)


def test_denormalize_clamps(stats):
    images = torch.tensor([[[[-100.0, 0.0], [2.0, 100.0]]]])
    out = denormalize_to_uint8(images, stats)
    assert out.dtype == np.uint8
    assert out[0, 0, 0, 0] == 0 and out[0, 0, 1, 1] == 255
    assert out[0, 0, 0, 1] == int(0.5 * 255)  # astype truncates 127.5


def test_png_grid_layout(tmp_path, blob_ds):
    from PIL import Image

    syn = random_synthetic(blob_ds, 4, seed=0)
    path = tmp_path / "grid.png"
    save_png_grid(path, syn, blob_ds.norm_stats, pad=2)
    img = Image.open(path)
    # 3 classes x 4 per class of 8x8 tiles with 2px padding
    assert img.size == (4 * 10 + 2, 3 * 10 + 2)


def test_config_hash_stable_and_sensitive():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16
    assert config_hash(a) != config_hash({"x": 2, "y": [1, 2]})


# ---------------------------------------------------------------------- CLI

BLOB_ARGS = [
    "--dataset", "blobs", "--blob-classes", "2", "--blob-per-class", "20",
    "--blob-separation", "8.0", "--depth", "2", "--width", "16",
    "--outer-iters", "2", "--inner-loops", "2", "--batch-real", "8",
    "--ipc", "1", "--aug", "none",
]


def test_cli_distill_outputs(tmp_path, capsys):
    out = str(tmp_path / "run")
    rc = main(["distill", *BLOB_ARGS, "--out", out, "--snapshot-interval", "1"])
    assert rc == 0
    for name in ("syn.bin", "syn.png", "metrics.csv", "manifest.json", "config.json"):
        assert os.path.exists(os.path.join(out, name)), name
    snaps = sorted(os.listdir(os.path.join(out, "snapshots")))
    assert snaps == ["iter_000000.bin", "iter_000001.bin", "iter_000002.bin"]
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["ipc"] == 1 and manifest["dataset"] == "blobs"
    with open(os.path.join(out, "metrics.csv")) as f:
        rows = f.read().strip().splitlines()
    assert len(rows) - 1 == 2 * 2 * 2  # outer x inner x classes
    assert "synthetic images" in capsys.readouterr().out


def test_cli_distill_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["distill", *BLOB_ARGS, "--out", a]) == 0
    assert main(["distill", *BLOB_ARGS, "--out", b]) == 0
    with open(os.path.join(a, "syn.bin"), "rb") as f1, open(os.path.join(b, "syn.bin"), "rb") as f2:
        assert f1.read() == f2.read()


def test_cli_missing_root_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("REPDISTILL_DATA_ROOT", raising=False)
    rc = main(["distill", "--dataset", "mnist", "--out", str(tmp_path)])
    assert rc == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_bad_dataset_files_exit_2(tmp_path, capsys):
    rc = main(["distill", "--dataset", "mnist", "--root", str(tmp_path),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_env_root_fallback(tmp_path, monkeypatch, blob_ds):
    from repdistill.data import save_blobs_file

    save_blobs_file(blob_ds, tmp_path / "blobs.bin")
    monkeypatch.setenv("REPDISTILL_DATA_ROOT", str(tmp_path))
    out = str(tmp_path / "run")
    rc = main(["distill", "--dataset", "blobs-file", "--depth", "2", "--width", "16",
               "--outer-iters", "1", "--inner-loops", "1", "--batch-real", "8",
               "--ipc", "1", "--aug", "none", "--out", out])
    assert rc == 0


def test_cli_eval_prints_accuracy(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["distill", *BLOB_ARGS, "--out", out]) == 0
    rc = main(["eval", os.path.join(out, "syn.bin"), "--dataset", "blobs",
               "--blob-classes", "2", "--blob-per-class", "20",
               "--blob-separation", "8.0", "--depth", "2", "--width", "16",
               "--aug", "none", "--eval-epochs", "30", "--eval-lr", "0.05",
               "--eval-repeats", "1"])
    assert rc == 0
    assert "top-1 accuracy:" in capsys.readouterr().out


def test_cli_compare_writes_report(tmp_path, capsys):
    out = str(tmp_path / "cmp")
    rc = main(["compare", "--strategies", "random-random", *BLOB_ARGS, "--out", out,
               "--snapshot-interval", "1", "--eval-epochs", "10", "--eval-lr", "0.05",
               "--eval-repeats", "1"])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "comparison.csv"))
    assert os.path.exists(os.path.join(out, "accuracy_curve.png"))
    assert os.path.exists(os.path.join(out, "gradient_difference.png"))
    with open(os.path.join(out, "comparison.csv")) as f:
        lines = f.read().strip().splitlines()
    assert lines[1].startswith("random-random,")
    assert "random-random" in capsys.readouterr().out


def test_cli_compare_bad_strategy_exit_2(tmp_path):
    rc = main(["compare", "--strategies", "greedy-random", *BLOB_ARGS,
               "--out", str(tmp_path)])
    assert rc == 2


def test_cli_diagnose(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["distill", *BLOB_ARGS, "--out", out, "--snapshot-interval", "1"]) == 0
    diag = str(tmp_path / "diag")
    rc = main(["diagnose", out, "--dataset", "blobs", "--blob-classes", "2",
               "--blob-per-class", "20", "--blob-separation", "8.0",
               "--depth", "2", "--width", "16", "--out", diag])
    assert rc == 0
    assert os.path.exists(os.path.join(diag, "match_loss_curve.png"))
    assert os.path.exists(os.path.join(diag, "feature_migration.csv"))
    assert os.path.exists(os.path.join(diag, "grad_norm_hist.png"))
    text = capsys.readouterr().out
    assert "feature migration distances" in text
    with open(os.path.join(diag, "feature_migration.csv")) as f:
        rows = f.read().strip().splitlines()
    assert len(rows) - 1 == 2  # 3 snapshots -> 2 transitions


def test_cli_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[run]\ndataset = blobs\nblob-classes = 2\nblob-per-class = 20\n"
        "blob-separation = 8.0\ndepth = 2\nwidth = 16\nouter-iters = 5\n"
        "inner-loops = 2\nbatch-real = 8\nipc = 1\naug = none\n")
    parser = build_parser()
    args = parser.parse_args(["distill", "--config", str(cfg), "--outer-iters", "3"])
    resolved = resolve_config(args)
    assert resolved["outer_iters"] == 3  # flag wins over file
    assert resolved["inner_loops"] == 2  # file wins over default
    assert resolved["blob_classes"] == 2


def test_cli_config_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nlearning_rate = 1\n")
    rc = main(["distill", "--config", str(cfg)])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def test_cli_missing_config_file_exit_2(tmp_path):
    assert main(["distill", "--config", str(tmp_path / "nope.ini")]) == 2


def test_cli_bad_flag_exit_2():
    assert main(["distill", "--objective", "trajectory"]) == 2
    assert main(["unknown-command"]) == 2


def test_cli_standard_defaults():
    parser = build_parser()
    args = parser.parse_args(["distill", "--dataset", "mnist"])
    resolved = resolve_config(args)
    assert resolved["outer_iters"] == 1200
    assert resolved["inner_loops"] == 100
    assert resolved["lr_images"] == pytest.approx(0.005)
    assert resolved["lr_model"] == pytest.approx(0.01)
    assert resolved["interval"] == 10
    assert resolved["batch_real"] == 128
    assert resolved["per_cluster"] == 1
    assert resolved["eval_epochs"] == 1000
    assert resolved["eval_lr"] == pytest.approx(0.01)
    assert resolved["eval_repeats"] == 5
    assert resolved["metric"] == "mae"  # mnist defaults to mae
    args = parser.parse_args(["distill", "--dataset", "cifar10"])
    assert resolve_config(args)["metric"] == "mse"
