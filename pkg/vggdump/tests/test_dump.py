"""Dump tool: shapes, determinism, error handling, loader compatibility."""

import os

import numpy as np
import pytest

from vggdump.cli import main
from vggdump.dump import (
    DumpError,
    DumpRequest,
    LAYER_INDEX,
    SIDECAR_NAME,
    dump_features,
)

# the consuming engine's loader is the validation authority for outputs
from refsr.features import load_feature_map
from refsr.tensor_io import read_tensor


def test_request_rejects_unknown_layer():
    with pytest.raises(DumpError):
        DumpRequest(image_path="x.png", layers=["relu9_9"])


def test_request_rejects_empty_layers():
    with pytest.raises(DumpError):
        DumpRequest(image_path="x.png", layers=[])


def test_layer_shapes_160(toy_image_png, weights_file, tmp_path):
    req = DumpRequest(
        image_path=toy_image_png,
        layers=["relu1_1", "relu2_1", "relu3_1", "relu5_1"],
        out_dir=str(tmp_path),
        weights_path=weights_file,
    )
    written = dump_features(req)
    by_layer = {os.path.basename(p).split(".")[-2]: p for p in written}
    assert read_tensor(by_layer["relu1_1"]).shape == (64, 160, 160)
    assert read_tensor(by_layer["relu2_1"]).shape == (128, 80, 80)
    assert read_tensor(by_layer["relu3_1"]).shape == (256, 40, 40)
    assert read_tensor(by_layer["relu5_1"]).shape == (512, 10, 10)


def test_outputs_pass_primary_loader_validation(toy_image_png, weights_file, tmp_path):
    req = DumpRequest(
        image_path=toy_image_png,
        layers=["relu3_1"],
        out_dir=str(tmp_path),
        weights_path=weights_file,
    )
    (path,) = dump_features(req)
    fm = load_feature_map(path, level_tag="relu3_1")
    assert fm.channels == 256
    assert fm.data.dtype == np.float32
    assert np.isfinite(fm.data).all()
    assert fm.data.min() >= 0.0  # ReLU output


def test_deterministic_bytes(toy_image_png, weights_file, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        dump_features(DumpRequest(
            image_path=toy_image_png, layers=["relu3_1"],
            out_dir=str(out), weights_path=weights_file,
        ))
    name = os.path.basename(toy_image_png).replace(".png", ".relu3_1.tnsr")
    assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_sidecar_documents_preprocessing(toy_image_png, weights_file, tmp_path):
    dump_features(DumpRequest(
        image_path=toy_image_png, layers=["relu3_1"],
        out_dir=str(tmp_path), weights_path=weights_file,
    ))
    sidecar = (tmp_path / SIDECAR_NAME).read_text()
    assert "normalize_mean: 0.485 0.456 0.406" in sidecar
    assert "normalize_std: 0.229 0.224 0.225" in sidecar


def test_missing_weights_error(toy_image_png, tmp_path):
    with pytest.raises(DumpError, match="not found"):
        dump_features(DumpRequest(
            image_path=toy_image_png, layers=["relu3_1"],
            out_dir=str(tmp_path), weights_path=str(tmp_path / "nope.pth"),
        ))


def test_undecodable_image_error(weights_file, tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"definitely not a png")
    with pytest.raises(DumpError, match="decode"):
        dump_features(DumpRequest(
            image_path=str(bad), layers=["relu3_1"],
            out_dir=str(tmp_path), weights_path=weights_file,
        ))


def test_incomplete_weights_error(toy_image_png, tmp_path):
    import torch

    from vggdump.dump import feature_prefix

    torch.manual_seed(1)
    shallow = feature_prefix(LAYER_INDEX["relu1_1"])
    path = tmp_path / "shallow.pth"
    torch.save(shallow.state_dict(), path)
    with pytest.raises(DumpError, match="incomplete"):
        dump_features(DumpRequest(
            image_path=toy_image_png, layers=["relu3_1"],
            out_dir=str(tmp_path), weights_path=str(path),
        ))


class TestCli:
    def test_dump_success(self, toy_image_png, weights_file, tmp_path, capsys):
        rc = main([
            "dump", "--image", toy_image_png, "--layers", "relu3_1,relu5_1",
            "--out", str(tmp_path), "--weights", weights_file,
        ])
        assert rc == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert len(printed) == 2
        for path in printed:
            assert os.path.exists(path)

    def test_missing_weights_nonzero_exit(self, toy_image_png, tmp_path, capsys):
        rc = main([
            "dump", "--image", toy_image_png, "--out", str(tmp_path),
            "--weights", str(tmp_path / "absent.pth"),
        ])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_bad_image_nonzero_exit(self, weights_file, tmp_path, capsys):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"nope")
        rc = main([
            "dump", "--image", str(bad), "--out", str(tmp_path),
            "--weights", weights_file,
        ])
        assert rc == 1
