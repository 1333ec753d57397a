"""Export VGG19 activations at named layers to ".tnsr" tensor files.

The exchange format (shared with the consuming engine) is little-endian:
magic "TNSR", version byte 1, dtype byte (1 = float32, 2 = float64), ndim,
a reserved zero byte, unsigned 32-bit extents, then the row-major payload.

Images are normalized with the standard torchvision ImageNet statistics
before the forward pass; the exact constants are recorded in a sidecar
text file next to the dumps so consumers can document the preprocessing.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

# activation index inside torchvision's vgg19().features
LAYER_INDEX = {
    "relu1_1": 1,
    "relu2_1": 6,
    "relu3_1": 11,
    "relu5_1": 29,
}

# VGG19 feature configuration ('M' = 2x2 max pool); the prefix through
# relu5_1 is all the texture layers need, so the classifier is never built
VGG19_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
             512, 512, 512, 512, "M", 512)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MAGIC = b"TNSR"
VERSION = 1
FLOAT32 = 1

SIDECAR_NAME = "preprocessing.txt"


class DumpError(RuntimeError):
    pass


@dataclass
class DumpRequest:
    image_path: str
    layers: list = field(default_factory=lambda: ["relu3_1"])
    out_dir: str = "."
    weights_path: str | None = None

    def __post_init__(self):
        if not self.layers:
            raise DumpError("at least one layer must be requested")
        unknown = [name for name in self.layers if name not in LAYER_INDEX]
        if unknown:
            raise DumpError(
                f"unknown layer(s) {unknown}; supported: {sorted(LAYER_INDEX)}"
            )


def write_tnsr(t: np.ndarray, path) -> None:
    """Single-precision exchange-format writer."""
    t = np.ascontiguousarray(t, dtype="<f4")
    if not np.isfinite(t).all():
        raise DumpError("refusing to write NaN/Inf activations")
    header = MAGIC + struct.pack("<BBBB", VERSION, FLOAT32, t.ndim, 0)
    extents = struct.pack(f"<{t.ndim}I", *t.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(extents)
        fh.write(t.tobytes())


def feature_prefix(max_index: int) -> torch.nn.Sequential:
    """The VGG19 feature stack up to max_index, with torchvision's layer
    numbering; the classifier half is never instantiated."""
    layers = []
    in_ch = 3
    for v in VGG19_CFG:
        if v == "M":
            layers.append(torch.nn.MaxPool2d(kernel_size=2, stride=2))
        else:
            layers.append(torch.nn.Conv2d(in_ch, v, kernel_size=3, padding=1))
            layers.append(torch.nn.ReLU(inplace=True))
            in_ch = v
        if len(layers) > max_index:
            break
    return torch.nn.Sequential(*layers[: max_index + 1])


def _load_weights(weights_path: str):
    if not os.path.exists(weights_path):
        raise DumpError(f"weights file not found: {weights_path}")
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    features_state = {}
    for key, value in state.items():
        if key.startswith("features."):
            features_state[key[len("features."):]] = value
        elif key and key[0].isdigit():
            features_state[key] = value
    return features_state


def build_extractor(weights_path: str | None, max_index: int) -> torch.nn.Module:
    """VGG19 feature prefix up to max_index (inclusive), weights loaded.

    weights_path may hold a full vgg19 state dict or a features-only one.
    Without a path, the torchvision pretrained checkpoint is used if it is
    already cached locally; nothing is downloaded here.
    """
    extractor = feature_prefix(max_index)
    if weights_path is not None:
        features_state = _load_weights(weights_path)
    else:
        from torch.hub import get_dir
        from torchvision.models import VGG19_Weights

        url = VGG19_Weights.IMAGENET1K_V1.url
        cached = os.path.join(get_dir(), "checkpoints", os.path.basename(url))
        if not os.path.exists(cached):
            raise DumpError(
                "pretrained weights unavailable: no --weights given and no local "
                f"torchvision cache at {cached}"
            )
        features_state = _load_weights(cached)
    missing, _ = extractor.load_state_dict(features_state, strict=False)
    if missing:
        raise DumpError(
            f"weights are incomplete for the requested layers: missing {sorted(missing)}"
        )
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)
    return extractor


def load_image(path) -> torch.Tensor:
    """RGB image -> normalized 1x3xHxW tensor; no resizing."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except Exception as exc:
        raise DumpError(f"cannot decode image {path}: {exc}") from exc
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    arr = (arr - mean) / std
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def write_sidecar(out_dir) -> str:
    path = os.path.join(out_dir, SIDECAR_NAME)
    lines = [
        "input: 8-bit RGB mapped to [0,1], no resizing",
        f"normalize_mean: {' '.join(str(v) for v in IMAGENET_MEAN)}",
        f"normalize_std: {' '.join(str(v) for v in IMAGENET_STD)}",
        "layout: CxHxW float32, row-major",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def dump_features(req: DumpRequest) -> list:
    """Run the extractor once and write one ".tnsr" per requested layer.

    Returns the list of written activation paths. Output filenames follow
    <image-stem>.<layer>.tnsr.
    """
    torch.set_num_threads(1)  # bit-reproducible runs
    indices = [LAYER_INDEX[name] for name in req.layers]
    extractor = build_extractor(req.weights_path, max(indices))
    x = load_image(req.image_path)
    os.makedirs(req.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(req.image_path))[0]
    wanted = {LAYER_INDEX[name]: name for name in req.layers}
    written = []
    with torch.no_grad():
        for i, layer in enumerate(extractor):
            x = layer(x)
            if i in wanted:
                name = wanted[i]
                out_path = os.path.join(req.out_dir, f"{stem}.{name}.tnsr")
                write_tnsr(x[0].numpy(), out_path)
                written.append(out_path)
    write_sidecar(req.out_dir)
    return written
