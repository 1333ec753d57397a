"""Image tensors, PNG I/O, bicubic rescaling, and image-quality metrics.

Images are H x W x C float arrays with values in [0, 1]. All operations are
pure functions; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from PIL import Image

# Catmull-Rom bicubic kernel parameter.
BICUBIC_A = -0.5

# Standard SSIM constants on the [0, 1] range.
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10

# Rec. 601 luma weights for the RGB -> luminance reduction used by SSIM.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def ensure_finite(data: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Reject NaN/Inf in externally supplied data."""
    data = np.asarray(data)
    if not np.isfinite(data).all():
        raise ValueError(f"{what} contains NaN or Inf")
    return data


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x C image with float values in [0, 1], row-major."""

    data: np.ndarray  # (H, W, C)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
        ensure_finite(arr, "image")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]; use ImageTensor.clipped")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def clipped(cls, data: np.ndarray) -> "ImageTensor":
        """Build an image, clamping values into [0, 1] first."""
        arr = ensure_finite(np.asarray(data, dtype=np.float64), "image")
        return cls(np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def read_png(path) -> ImageTensor:
    """Read an 8-bit RGB or grayscale PNG, mapping [0, 255] to [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageTensor(arr)


def write_png(img: ImageTensor, path) -> None:
    """Write as 8-bit PNG, mapping [0, 1] to rounded [0, 255]."""
    arr = np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic weight for distances t >= 0."""
    a = BICUBIC_A
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0,
        np.where(t < 2.0, a * (t ** 3 - 5.0 * t ** 2 + 8.0 * t - 4.0), 0.0),
    )
    return w


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation matrix along one axis.

    Output centers map to input coordinates under the half-pixel convention;
    sample indices are clamped at the borders.
    """
    scale = n_out / n_in
    out_idx = np.arange(n_out, dtype=np.float64)
    src = (out_idx + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(-1, 3):
        w = _cubic_kernel(frac - j)
        idx = np.clip(base + j, 0, n_in - 1)
        np.add.at(mat, (out_idx.astype(np.int64), idx), w)
    return mat


def _as_fraction(scale) -> Fraction:
    if isinstance(scale, Fraction):
        return scale
    if isinstance(scale, int):
        return Fraction(scale)
    return Fraction(scale).limit_denominator(10 ** 6)


def bicubic_resize(img: ImageTensor, scale) -> ImageTensor:
    """Rescale by a positive rational factor with Catmull-Rom bicubic weights.

    scale * height and scale * width must both be integers; otherwise the
    request is rejected.
    """
    frac = _as_fraction(scale)
    if frac <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = img.height, img.width
    new_h = Fraction(h) * frac
    new_w = Fraction(w) * frac
    if new_h.denominator != 1 or new_w.denominator != 1 or new_h < 1 or new_w < 1:
        raise ValueError(
            f"scale {frac} applied to {h}x{w} gives non-integral dimensions "
            f"{float(new_h)}x{float(new_w)}"
        )
    new_h, new_w = int(new_h), int(new_w)
    if new_h == h and new_w == w:
        return img
    rows = _resize_matrix(h, new_h)
    cols = _resize_matrix(w, new_w)
    # (H', W', C) = rows @ data @ cols^T applied per channel
    out = np.einsum("ij,jkc,lk->ilc", rows, img.data, cols, optimize=True)
    return ImageTensor(np.clip(out, 0.0, 1.0))


def _check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def psnr(a: ImageTensor, b: ImageTensor, luminance: bool = False) -> float:
    """PSNR in dB on the [0, 1] range, capped at 100 dB.

    Computed over all channels jointly by default; luminance=True reduces
    3-channel inputs to the luma plane first.
    """
    _check_same_shape(a, b)
    if luminance:
        diff = to_luminance(a) - to_luminance(b)
    else:
        diff = a.data - b.data
    mse = float(np.mean(diff ** 2))
    return min(10.0 * np.log10(1.0 / max(mse, PSNR_MSE_FLOOR)), PSNR_CAP_DB)


def to_luminance(img: ImageTensor) -> np.ndarray:
    """(H, W) luminance plane; 3-channel images use Rec. 601 weights."""
    if img.channels == 1:
        return img.data[:, :, 0]
    r, g, b = LUMA_WEIGHTS
    return r * img.data[:, :, 0] + g * img.data[:, :, 1] + b * img.data[:, :, 2]


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _filter_valid(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(plane, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    3-channel inputs are reduced to luminance first. Images smaller than the
    window are rejected.
    """
    _check_same_shape(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(
            f"image {a.height}x{a.width} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    x = to_luminance(a)
    y = to_luminance(b)
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sigma_x = _filter_valid(x * x, win) - mu_x * mu_x
    sigma_y = _filter_valid(y * y, win) - mu_y * mu_y
    sigma_xy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return float(np.mean(num / den))
