"""From-scratch differentiable layers on single-sample (C, H, W) arrays.

Convolution runs as im2col + GEMM. Every forward returns an explicit cache
so one forward tape can be replayed by several backward passes; backward
functions are pure and return exact gradients (up to float rounding).
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.2


def im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unroll (C, H, W) into a (C*k*k, Ho*Wo) patch matrix, channel-major."""
    c, h, w = x.shape
    if pad:
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C, Ho, Wo, k, k)
    ho, wo = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(gcols: np.ndarray, x_shape, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Scatter-add a patch-matrix gradient back to input shape (adjoint of im2col)."""
    c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    g6 = gcols.reshape(c, k, k, ho, wo)
    gxp = np.zeros((c, hp, wp), dtype=gcols.dtype)
    for ky in range(k):
        for kx in range(k):
            gxp[:, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += g6[:, ky, kx]
    if pad:
        return gxp[:, pad:pad + h, pad:pad + w]
    return gxp


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride: int = 1, pad: int | None = None):
    """Cross-correlation of (C,H,W) with (O,C,k,k) weights plus bias.

    Returns (y, cache); cache holds the input for the backward pass.
    """
    o, c, k, _ = w.shape
    if x.shape[0] != c:
        raise ValueError(f"conv expects {c} input channels, got {x.shape[0]}")
    if pad is None:
        pad = k // 2
    cols = im2col(x, k, stride, pad)
    ho = conv_out_size(x.shape[1], k, stride, pad)
    wo = conv_out_size(x.shape[2], k, stride, pad)
    y = (w.reshape(o, -1) @ cols)
    if b is not None:
        y += b[:, None]
    return y.reshape(o, ho, wo), (x, stride, pad)


def conv2d_backward(cache, w, gy):
    """Exact gradients (grad_x, grad_w, grad_b) for conv2d_forward."""
    x, stride, pad = cache
    o, c, k, _ = w.shape
    gy_mat = gy.reshape(o, -1)
    cols = im2col(x, k, stride, pad)
    gw = (gy_mat @ cols.T).reshape(w.shape)
    gb = gy_mat.sum(axis=1)
    gcols = w.reshape(o, -1).T @ gy_mat
    gx = col2im(gcols, x.shape, k, stride, pad)
    return gx, gw, gb


def conv2d_input_grad(cache, w, gy):
    """Input gradient only (skips the weight GEMM)."""
    x, stride, pad = cache
    o, c, k, _ = w.shape
    gcols = w.reshape(o, -1).T @ gy.reshape(o, -1)
    return col2im(gcols, x.shape, k, stride, pad)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, gy):
    return gy * mask


def leaky_relu_forward(x, slope: float = LEAKY_SLOPE):
    mask = x > 0
    return np.where(mask, x, x * slope), mask


def leaky_relu_backward(mask, gy, slope: float = LEAKY_SLOPE):
    return np.where(mask, gy, gy * slope)


def avgpool2_forward(x):
    """2x2 average pooling; requires even spatial extents."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"average pooling needs even extents, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2_backward(gy):
    g = np.repeat(np.repeat(gy, 2, axis=1), 2, axis=2)
    return g * np.asarray(0.25, dtype=gy.dtype)


def pixel_shuffle_forward(x, r: int):
    """(C*r^2, H, W) -> (C, r*H, r*W): out[c, h*r+i, w*r+j] = in[c*r^2+i*r+j, h, w]."""
    cr2, h, w = x.shape
    if cr2 % (r * r):
        raise ValueError(f"{cr2} channels not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    return x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)


def pixel_shuffle_backward(gy, r: int):
    """Exact inverse permutation of pixel_shuffle_forward."""
    c, hr, wr = gy.shape
    if hr % r or wr % r:
        raise ValueError(f"gradient extents {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    return gy.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)


def residual_block_forward(x, w1, b1, w2, b2):
    """y = x + conv2(relu(conv1(x))); equal in/out channels required."""
    if w1.shape[1] != x.shape[0] or w2.shape[0] != x.shape[0]:
        raise ValueError("residual block requires matching in/out channels")
    z1, c1 = conv2d_forward(x, w1, b1)
    a1, mask = relu_forward(z1)
    z2, c2 = conv2d_forward(a1, w2, b2)
    return x + z2, (c1, mask, c2)


def residual_block_backward(cache, w1, w2, gy):
    """Gradients (gx, gw1, gb1, gw2, gb2) through the skip connection."""
    c1, mask, c2 = cache
    ga1, gw2, gb2 = conv2d_backward(c2, w2, gy)
    gz1 = relu_backward(mask, ga1)
    gx1, gw1, gb1 = conv2d_backward(c1, w1, gz1)
    return gy + gx1, gw1, gb1, gw2, gb2


def he_init(rng: np.random.Generator, out_ch: int, in_ch: int, k: int, dtype,
            scale: float = 1.0) -> np.ndarray:
    """He-scaled normal conv weights: std = scale * sqrt(2 / fan_in).

    scale=1 is the ReLU-following case; layers without a following ReLU use
    1/sqrt(2) (variance-preserving), and residual-branch outputs use a small
    scale so deep stacks start near the identity instead of blowing up the
    output variance exponentially with depth.
    """
    std = scale * np.sqrt(2.0 / (in_ch * k * k))
    return (rng.standard_normal((out_ch, in_ch, k, k)) * std).astype(dtype)


def chw(img_hwc: np.ndarray) -> np.ndarray:
    """H,W,C image plane -> C,H,W feature layout."""
    return np.ascontiguousarray(np.transpose(img_hwc, (2, 0, 1)))


def hwc(x_chw: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(x_chw, (1, 2, 0)))
