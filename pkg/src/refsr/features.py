"""Feature maps, feature pyramids, and the built-in fallback extractor.

The fallback extractor is a fixed, seeded stack of random 3x3 convolutions
with ReLU and 2x2 average pooling between levels. It stands in for an
externally produced texture network so the whole engine can run hermetic:
the matching/swap/loss machinery does not care whether features were
learned. It is differentiable with respect to its input, which is all the
loss path needs (the filters themselves are frozen).

Externally dumped activations enter through the same FeatureMap type via
the ".tnsr" exchange format.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor_io import read_tensor
from .tensors import ImageTensor, ensure_finite

# (in_channels, out_channels, tag); pooling by 2 between consecutive levels.
FALLBACK_LEVELS = ((3, 16, "L1"), (16, 32, "L2"), (32, 64, "L3"))
FALLBACK_SCALE = 4  # input extents must divide this
MATCH_LEVEL_TAG = "L3"


@dataclass(frozen=True)
class FeatureMap:
    """A C x H x W activation map tagged with its extraction level."""

    data: np.ndarray  # (C, H, W)
    level_tag: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be CxHxW, got shape {arr.shape}")
        ensure_finite(arr, "feature map")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """Ordered feature maps from shallow to deep; extents never increase."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("empty pyramid")
        for shallow, deep in zip(levels, levels[1:]):
            if deep.height > shallow.height or deep.width > shallow.width:
                raise ValueError(
                    f"pyramid extents must be non-increasing: "
                    f"{shallow.level_tag} {shallow.height}x{shallow.width} -> "
                    f"{deep.level_tag} {deep.height}x{deep.width}"
                )
        object.__setattr__(self, "levels", levels)

    def by_tag(self, tag: str) -> FeatureMap:
        for fm in self.levels:
            if fm.level_tag == tag:
                return fm
        raise KeyError(f"no level tagged {tag!r} in pyramid")

    @property
    def deepest(self) -> FeatureMap:
        return self.levels[-1]


class FallbackExtractor:
    """Deterministic seeded random-filter pyramid extractor.

    Produces L1 (16ch, full res), L2 (32ch, 1/2), L3 (64ch, 1/4). Biases are
    zero so the zero image maps to zero at every level.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.weights = [
            nn.he_init(rng, out_ch, in_ch, 3, np.float64)
            for in_ch, out_ch, _ in FALLBACK_LEVELS
        ]

    def forward(self, img: ImageTensor, dtype=np.float32, want_cache: bool = False):
        data = img.data
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        return self.forward_chw(nn.chw(data).astype(dtype), want_cache=want_cache)

    def forward_chw(self, x: np.ndarray, want_cache: bool = False):
        """Raw (3, H, W) entry point; values may lie outside [0, 1].

        Training feeds the generator's pre-clamp output here so gradients
        keep flowing where clamping would saturate.
        """
        if x.ndim != 3 or x.shape[0] != 3:
            raise ValueError(f"expected a 3xHxW array, got shape {x.shape}")
        if x.shape[1] % FALLBACK_SCALE or x.shape[2] % FALLBACK_SCALE:
            raise ValueError(
                f"extents {x.shape[1]}x{x.shape[2]} must be divisible by {FALLBACK_SCALE}"
            )
        maps, caches = [], []
        for i, (_, _, tag) in enumerate(FALLBACK_LEVELS):
            w = self.weights[i].astype(x.dtype)
            z, conv_cache = nn.conv2d_forward(x, w, None)
            act, mask = nn.relu_forward(z)
            maps.append(FeatureMap(act, tag))
            caches.append((conv_cache, mask))
            if i + 1 < len(FALLBACK_LEVELS):
                x = nn.avgpool2_forward(act)
        pyramid = FeaturePyramid(tuple(maps))
        if want_cache:
            return pyramid, caches
        return pyramid

    def extract(self, img: ImageTensor, dtype=np.float32) -> FeaturePyramid:
        return self.forward(img, dtype=dtype)

    def input_gradient(self, caches, level_grads: dict) -> np.ndarray:
        """Backpropagate per-level output gradients to the input image.

        level_grads maps a level tag to a (C, H, W) gradient; missing levels
        contribute nothing. Returns an H x W x 3 gradient.
        """
        provided = [g for g in level_grads.values() if g is not None]
        if not provided:
            raise ValueError("no level gradients provided")
        dtype = provided[0].dtype
        g = None
        for i in reversed(range(len(FALLBACK_LEVELS))):
            _, _, tag = FALLBACK_LEVELS[i]
            conv_cache, mask = caches[i]
            gl = level_grads.get(tag)
            if g is not None:
                g = nn.avgpool2_backward(g)
                gl = g if gl is None else gl + g
            if gl is None:
                gl = np.zeros(mask.shape, dtype=dtype)
            gz = nn.relu_backward(mask, gl)
            w = self.weights[i].astype(gz.dtype)
            g = nn.conv2d_input_grad(conv_cache, w, gz)
        return nn.hwc(g)


def match_feature_map(pyramid: FeaturePyramid, tag: str = MATCH_LEVEL_TAG) -> FeatureMap:
    return pyramid.by_tag(tag)


def load_feature_map(path, level_tag: str = "") -> FeatureMap:
    """Load a dumped activation tensor; external and fallback maps are
    interchangeable past this point."""
    data = read_tensor(path)
    if data.ndim != 3:
        raise ValueError(f"{path}: expected a CxHxW tensor, got ndim={data.ndim}")
    return FeatureMap(data, level_tag)


def external_feature_path(directory, stem: str, layer: str) -> str:
    return os.path.join(directory, f"{stem}.{layer}.tnsr")


def load_external_features(directory, stem: str, layer: str) -> FeatureMap:
    path = external_feature_path(directory, stem, layer)
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"no dumped features for {stem!r} at layer {layer!r}: expected {path}"
        )
    return load_feature_map(path, level_tag=layer)
