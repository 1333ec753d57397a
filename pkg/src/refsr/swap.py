"""Texture swapping and the scale-adjustment pathway that feeds matching.

swap_texture pastes the best-matched reference patch at every unpadded
location of the output grid, averages the overlaps, then multiplies each
location by its clamped similarity score so uncorrelated texture is
suppressed. Accumulation runs in extended precision and fixed raster
order, which keeps the identity-swap and scaling algebra exact and the
output bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .features import FeatureMap
from .matching import MatchResult
from .tensors import ImageTensor, bicubic_resize

UPSCALE_FACTOR = 4

WEIGHT_MODES = ("multiply_sim", "unit")


@dataclass(frozen=True)
class SwapConfig:
    """Must mirror the MatchConfig that produced the correspondence."""

    patch_size: int = 3
    stride: int = 1
    weight_mode: str = "multiply_sim"

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")


def default_upscaler(img: ImageTensor) -> ImageTensor:
    return bicubic_resize(img, UPSCALE_FACTOR)


def scale_adjust(i_lr: ImageTensor, i_ref: ImageTensor, upscaler=None):
    """Bring both matching inputs to reference resolution and blur level.

    The query side is the upscaled LR image; the reference side is the
    reference downscaled 4x and pushed through the same upscaler, so both
    carry the same resampling artifacts.
    """
    if upscaler is None:
        upscaler = default_upscaler
    if i_ref.height % UPSCALE_FACTOR or i_ref.width % UPSCALE_FACTOR:
        raise ValueError(
            f"reference {i_ref.height}x{i_ref.width} not divisible by {UPSCALE_FACTOR}"
        )
    lr_up = upscaler(i_lr)
    ref_blurred_up = upscaler(bicubic_resize(i_ref, Fraction(1, UPSCALE_FACTOR)))
    return lr_up, ref_blurred_up


def swap_texture(m_ref: FeatureMap, match: MatchResult, cfg: SwapConfig) -> FeatureMap:
    """Build the swapped, similarity-weighted texture map from m_ref."""
    if cfg.patch_size != match.patch_size or cfg.stride != match.stride:
        raise ValueError(
            f"swap config (k={cfg.patch_size}, s={cfg.stride}) does not match "
            f"the correspondence (k={match.patch_size}, s={match.stride})"
        )
    k, s = cfg.patch_size, cfg.stride
    ref = m_ref.data
    c, rh, rw = ref.shape
    if rh < k or rw < k:
        raise ValueError(f"reference map {rh}x{rw} smaller than patch size {k}")
    ref_rows = (rh - k) // s + 1
    ref_cols = (rw - k) // s + 1
    if (ref_rows, ref_cols) != (match.cand_rows, match.cand_cols):
        raise ValueError(
            f"scale mismatch: reference patch grid {ref_rows}x{ref_cols} vs "
            f"match candidate grid {match.cand_rows}x{match.cand_cols}"
        )
    h, w = match.index_map.shape
    if h < k or w < k:
        raise ValueError(f"output grid {h}x{w} smaller than patch size {k}")
    idx = match.index_map
    if idx.min() < 0 or idx.max() >= ref_rows * ref_cols:
        raise ValueError("index map entry outside the reference candidate set")

    half = k // 2
    acc = np.zeros((c, h, w), dtype=np.longdouble)
    count = np.zeros((h, w), dtype=np.int64)
    for y in range(half, h - half):
        ylo = y - half
        for x in range(half, w - half):
            j = int(idx[y, x])
            ty, tx = divmod(j, ref_cols)
            ty *= s
            tx *= s
            xlo = x - half
            acc[:, ylo:ylo + k, xlo:xlo + k] += ref[:, ty:ty + k, tx:tx + k]
            count[ylo:ylo + k, xlo:xlo + k] += 1
    swapped = (acc / count).astype(ref.dtype)
    if cfg.weight_mode == "multiply_sim":
        weights = match.clamped_sim().astype(ref.dtype)
        swapped = swapped * weights[None, :, :]
    return FeatureMap(swapped, m_ref.level_tag)
