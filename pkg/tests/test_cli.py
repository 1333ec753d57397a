"""Command-line surface: a miniature end-to-end run through every command."""

import os

import numpy as np
import pytest

from conftest import toy_image
from refsr.cli import main
from refsr.tensor_io import read_tensor
from refsr.tensors import read_png, write_png


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for i in range(2):
        write_png(toy_image(200 + i, size=32), root / f"img{i}.png")
    (root / "pairs.txt").write_text(
        "img0.png\timg0.png\tXH\nimg1.png\timg1.png\tXH\n", encoding="utf-8"
    )
    (root / "run.cfg").write_text(
        "features=12\ncontent_blocks=1\ntransfer_blocks=1\n"
        "batch_size=2\ntotal_epochs=2\npretrain_epochs=1\nlr=1e-3\nbeta=0\n",
        encoding="utf-8",
    )
    return root


def test_precompute_cli(workdir, capsys):
    rc = main([
        "precompute", "--manifest", str(workdir / "pairs.txt"),
        "--config", str(workdir / "run.cfg"), "--cache", str(workdir / "cache"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "2/2 pairs cached" in out
    assert any(f.endswith(".mt.tnsr") for f in os.listdir(workdir / "cache"))


def test_train_infer_eval_cli(workdir, capsys):
    rc = main([
        "train", "--manifest", str(workdir / "pairs.txt"),
        "--config", str(workdir / "run.cfg"), "--out", str(workdir / "run"),
    ])
    assert rc == 0
    model_dir = workdir / "run" / "checkpoints" / "final"
    assert model_dir.is_dir()

    # write the LR input the infer command will upscale
    from refsr.pipeline import derive_lr

    lr_img = derive_lr(read_png(workdir / "img0.png"))
    write_png(lr_img, workdir / "img0_lr.png")
    rc = main([
        "infer", "--lr", str(workdir / "img0_lr.png"), "--ref", str(workdir / "img0.png"),
        "--model", str(model_dir), "--out", str(workdir / "results" / "pair_0000.png"),
    ])
    assert rc == 0
    sr = read_png(workdir / "results" / "pair_0000.png")
    assert sr.data.shape == (32, 32, 3)

    rc = main([
        "infer", "--lr", str(workdir / "img0_lr.png"), "--ref", str(workdir / "img1.png"),
        "--model", str(model_dir), "--out", str(workdir / "results" / "pair_0001.png"),
    ])
    assert rc == 0

    rc = main([
        "eval", "--manifest", str(workdir / "pairs.txt"),
        "--results", str(workdir / "results"), "--out", str(workdir / "metrics.csv"),
    ])
    assert rc == 0
    lines = (workdir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "pair_id,level,psnr_db,ssim,gram_dist"
    assert len(lines) == 4  # two pairs + mean row
    assert lines[-1].startswith("mean,")


def test_eval_missing_results_nonzero_exit(workdir, tmp_path):
    empty = tmp_path / "none"
    empty.mkdir()
    rc = main([
        "eval", "--manifest", str(workdir / "pairs.txt"),
        "--results", str(empty), "--out", str(tmp_path / "m.csv"),
    ])
    assert rc == 1


def test_dump_fallback_cli(workdir):
    rc = main([
        "dump-fallback", "--image", str(workdir / "img0.png"),
        "--out", str(workdir / "dumps"), "--seed", "0",
    ])
    assert rc == 0
    l3 = read_tensor(workdir / "dumps" / "img0.L3.tnsr")
    assert l3.shape == (64, 8, 8)
    l1 = read_tensor(workdir / "dumps" / "img0.L1.tnsr")
    assert l1.shape == (16, 32, 32)


def test_emit_derived_cli(workdir):
    rc = main([
        "emit-derived", "--manifest", str(workdir / "pairs.txt"),
        "--out", str(workdir / "derived"),
    ])
    assert rc == 0
    assert (workdir / "derived" / "img0.lrup.png").exists()
    assert (workdir / "derived" / "img1.blurup.png").exists()


def test_precompute_failure_exit_code(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"garbage")
    manifest = tmp_path / "pairs.txt"
    manifest.write_text(f"{bad}\t{bad}\n", encoding="utf-8")
    rc = main([
        "precompute", "--manifest", str(manifest), "--cache", str(tmp_path / "cache"),
    ])
    assert rc == 1
    assert "ERROR" in capsys.readouterr().out
