"""Generator and critic networks, Adam optimization, and checkpointing.

The generator fuses a content stream (conv + residual blocks on the LR
image) with the swapped texture map through a conditional-transfer branch
(concatenate, convolve, residual blocks, add back onto the content
features), then upscales 4x with two sub-pixel stages. The critic is a
strided conv / leaky-ReLU stack ending in a global mean; it contains no
normalization, keeping it piecewise-linear so the gradient penalty's
frozen-mask second pass is exact.

Parameters live in a ModelParams name->tensor mapping together with Adam
moments; checkpoints are a directory of ".tnsr" tensors plus a plain-text
manifest.
"""

from __future__ import annotations

import os

import numpy as np

from . import nn
from .tensor_io import read_tensor, write_tensor

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

GENERATOR_FEATURES = 64
CONTENT_BLOCKS = 4
TRANSFER_BLOCKS = 4
UPSCALE = 4

CRITIC_WIDTHS = (32, 64, 64, 64)


class ModelParams:
    """Named parameter tensors plus per-tensor Adam state."""

    def __init__(self, params: dict):
        self.params = dict(params)
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def names(self):
        return list(self.params.keys())

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def adam_step(mp: ModelParams, grads: dict, lr: float,
              betas=ADAM_BETAS, eps: float = ADAM_EPS) -> ModelParams:
    """Standard bias-corrected Adam update, in place; increments the step."""
    b1, b2 = betas
    mp.step += 1
    t = mp.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in mp.params.items():
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m = mp.m[name]
        v = mp.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return mp


def save_checkpoint(directory, mp: ModelParams, meta: dict | None = None) -> None:
    """Directory of named .tnsr tensors + manifest (shapes, step, metadata)."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"step {mp.step}"]
    for key, val in (meta or {}).items():
        lines.append(f"meta {key} {val}")
    for name, p in mp.params.items():
        write_tensor(p, os.path.join(directory, f"{name}.tnsr"))
        write_tensor(mp.m[name], os.path.join(directory, f"{name}.adam_m.tnsr"))
        write_tensor(mp.v[name], os.path.join(directory, f"{name}.adam_v.tnsr"))
        lines.append(f"param {name} {'x'.join(map(str, p.shape))} {p.dtype.name}")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory) -> tuple[ModelParams, dict]:
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest.txt in {directory}")
    step = 0
    meta = {}
    names = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "step":
                step = int(parts[1])
            elif parts[0] == "meta":
                meta[parts[1]] = " ".join(parts[2:])
            elif parts[0] == "param":
                names.append(parts[1])
    params = {name: read_tensor(os.path.join(directory, f"{name}.tnsr")) for name in names}
    mp = ModelParams(params)
    mp.step = step
    for name in names:
        m_path = os.path.join(directory, f"{name}.adam_m.tnsr")
        v_path = os.path.join(directory, f"{name}.adam_v.tnsr")
        if os.path.exists(m_path):
            mp.m[name] = read_tensor(m_path)
        if os.path.exists(v_path):
            mp.v[name] = read_tensor(v_path)
    return mp, meta


# init gains: LINEAR for convs with no following ReLU, BRANCH for residual
# additions so deep stacks start near the identity
LINEAR_GAIN = 1.0 / np.sqrt(2.0)
BRANCH_GAIN = 0.1


class _Conv:
    """A named convolution whose weights live in an external params dict."""

    def __init__(self, name, in_ch, out_ch, k=3, stride=1, pad=None, init_scale=1.0):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.k = k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.init_scale = init_scale

    def register(self, params: dict, rng, dtype):
        params[f"{self.name}.w"] = nn.he_init(
            rng, self.out_ch, self.in_ch, self.k, dtype, scale=self.init_scale
        )
        params[f"{self.name}.b"] = np.zeros(self.out_ch, dtype=dtype)

    def forward(self, params, x):
        return nn.conv2d_forward(
            x, params[f"{self.name}.w"], params[f"{self.name}.b"], self.stride, self.pad
        )

    def backward(self, params, cache, gy, grads):
        gx, gw, gb = nn.conv2d_backward(cache, params[f"{self.name}.w"], gy)
        grads[f"{self.name}.w"] += gw
        grads[f"{self.name}.b"] += gb
        return gx


class _ResBlock:
    def __init__(self, name, ch):
        self.c1 = _Conv(f"{name}.c1", ch, ch)
        self.c2 = _Conv(f"{name}.c2", ch, ch, init_scale=BRANCH_GAIN)

    def register(self, params, rng, dtype):
        self.c1.register(params, rng, dtype)
        self.c2.register(params, rng, dtype)

    def forward(self, params, x):
        z1, cache1 = self.c1.forward(params, x)
        a1, mask = nn.relu_forward(z1)
        z2, cache2 = self.c2.forward(params, a1)
        return x + z2, (cache1, mask, cache2)

    def backward(self, params, cache, gy, grads):
        cache1, mask, cache2 = cache
        ga1 = self.c2.backward(params, cache2, gy, grads)
        gz1 = nn.relu_backward(mask, ga1)
        gx1 = self.c1.backward(params, cache1, gz1, grads)
        return gy + gx1


class Generator:
    """Content extractor + conditional texture transfer + sub-pixel upscaler."""

    def __init__(self, tex_channels=GENERATOR_FEATURES, features=GENERATOR_FEATURES,
                 content_blocks=CONTENT_BLOCKS, transfer_blocks=TRANSFER_BLOCKS):
        self.tex_channels = tex_channels
        self.features = features
        f = features
        self.content_in = _Conv("content.in", 3, f, init_scale=LINEAR_GAIN)
        self.content_res = [_ResBlock(f"content.res{i}", f) for i in range(content_blocks)]
        self.transfer_in = _Conv("transfer.in", f + tex_channels, f, init_scale=LINEAR_GAIN)
        self.transfer_res = [_ResBlock(f"transfer.res{i}", f) for i in range(transfer_blocks)]
        self.transfer_out = _Conv("transfer.out", f, f, init_scale=BRANCH_GAIN)
        self.up1 = _Conv("up.c1", f, 4 * f, init_scale=LINEAR_GAIN)
        self.up2 = _Conv("up.c2", f, 4 * f, init_scale=LINEAR_GAIN)
        self.up_out = _Conv("up.out", f, 3, init_scale=LINEAR_GAIN)
        self._layers = (
            [self.content_in] + self.content_res
            + [self.transfer_in] + self.transfer_res + [self.transfer_out]
            + [self.up1, self.up2, self.up_out]
        )

    def meta(self) -> dict:
        return {
            "arch": "generator",
            "features": self.features,
            "tex_channels": self.tex_channels,
            "content_blocks": len(self.content_res),
            "transfer_blocks": len(self.transfer_res),
        }

    def init_params(self, seed: int = 0, dtype=np.float32) -> ModelParams:
        rng = np.random.Generator(np.random.PCG64(seed))
        params: dict = {}
        for layer in self._layers:
            layer.register(params, rng, dtype)
        return ModelParams(params)

    def content_param_names(self, params: dict):
        return [n for n in params if n.startswith("content.")]

    def forward(self, params: dict, lr_chw: np.ndarray, m_t: np.ndarray):
        """(3,H,W) LR image + (Ct,H,W) texture map -> unclamped (3,4H,4W)."""
        if lr_chw.shape[0] != 3:
            raise ValueError(f"LR input must be 3xHxW, got {lr_chw.shape}")
        if m_t.shape != (self.tex_channels,) + lr_chw.shape[1:]:
            raise ValueError(
                f"texture map shape {m_t.shape} does not match "
                f"({self.tex_channels}, {lr_chw.shape[1]}, {lr_chw.shape[2]})"
            )
        tape = {}
        mc, tape["content.in"] = self.content_in.forward(params, lr_chw)
        for blk in self.content_res:
            mc, tape[blk.c1.name] = blk.forward(params, mc)
        cat = np.concatenate([mc, m_t], axis=0)
        t, tape["transfer.in"] = self.transfer_in.forward(params, cat)
        for blk in self.transfer_res:
            t, tape[blk.c1.name] = blk.forward(params, t)
        t, tape["transfer.out"] = self.transfer_out.forward(params, t)
        fused = mc + t
        z1, tape["up.c1"] = self.up1.forward(params, fused)
        s1 = nn.pixel_shuffle_forward(z1, 2)
        z2, tape["up.c2"] = self.up2.forward(params, s1)
        s2 = nn.pixel_shuffle_forward(z2, 2)
        sr, tape["up.out"] = self.up_out.forward(params, s2)
        return sr, tape

    def backward(self, params: dict, tape: dict, grad_sr: np.ndarray) -> dict:
        """Parameter gradients of a scalar whose SR-image gradient is grad_sr."""
        grads = {name: np.zeros_like(p) for name, p in params.items()}
        g = self.up_out.backward(params, tape["up.out"], grad_sr, grads)
        g = nn.pixel_shuffle_backward(g, 2)
        g = self.up2.backward(params, tape["up.c2"], g, grads)
        g = nn.pixel_shuffle_backward(g, 2)
        g_fused = self.up1.backward(params, tape["up.c1"], g, grads)
        # fused = mc + transfer_out(...)
        g_t = self.transfer_out.backward(params, tape["transfer.out"], g_fused, grads)
        for blk in reversed(self.transfer_res):
            g_t = blk.backward(params, tape[blk.c1.name], g_t, grads)
        g_cat = self.transfer_in.backward(params, tape["transfer.in"], g_t, grads)
        g_mc = g_fused + g_cat[: self.features]
        for blk in reversed(self.content_res):
            g_mc = blk.backward(params, tape[blk.c1.name], g_mc, grads)
        self.content_in.backward(params, tape["content.in"], g_mc, grads)
        return grads

    def infer(self, params: dict, lr_chw: np.ndarray, m_t: np.ndarray) -> np.ndarray:
        """Forward pass with inference-time clamping to [0, 1]."""
        sr, _ = self.forward(params, lr_chw, m_t)
        return np.clip(sr, 0.0, 1.0)


class Critic:
    """Strided conv + leaky-ReLU stack ending in a global mean score.

    Piecewise-linear by construction: convolutions, leaky ReLU, and the
    mean are the only operations.
    """

    piecewise_linear = True

    def __init__(self, in_channels=3, widths=CRITIC_WIDTHS, head_k=1):
        self.convs = []
        prev = in_channels
        for i, width in enumerate(widths):
            self.convs.append(_Conv(f"critic.c{i}", prev, width, k=3, stride=2, pad=1))
            prev = width
        self.head = _Conv("critic.head", prev, 1, k=head_k, stride=1, pad=0)

    def meta(self) -> dict:
        return {"arch": "critic", "widths": ",".join(str(c.out_ch) for c in self.convs)}

    def init_params(self, seed: int = 0, dtype=np.float32) -> ModelParams:
        rng = np.random.Generator(np.random.PCG64(seed))
        params: dict = {}
        for conv in self.convs:
            conv.register(params, rng, dtype)
        self.head.register(params, rng, dtype)
        return ModelParams(params)

    def forward(self, params: dict, x: np.ndarray):
        """(3,H,W) image -> scalar score, with a tape for backward passes."""
        tape = []
        for conv in self.convs:
            z, cache = conv.forward(params, x)
            x, mask = nn.leaky_relu_forward(z)
            tape.append((conv, cache, mask))
        z, cache = self.head.forward(params, x)
        tape.append((self.head, cache, None))
        score = float(z.mean())
        return score, (tape, z.shape)

    def backward(self, params: dict, full_tape, grad_score: float = 1.0):
        """Standard backward: (param grads, input gradient)."""
        tape, z_shape = full_tape
        grads = {name: np.zeros_like(p) for name, p in params.items()}
        g = np.full(z_shape, grad_score / np.prod(z_shape), dtype=params[f"{self.head.name}.w"].dtype)
        for conv, cache, mask in reversed(tape):
            if mask is not None:
                g = nn.leaky_relu_backward(mask, g)
            g = conv.backward(params, cache, g, grads)
        return grads, g

    def input_gradient(self, params: dict, full_tape):
        """Gradient of the score w.r.t. the input, plus the backward signals
        entering each convolution (needed by the penalty second pass)."""
        tape, z_shape = full_tape
        dtype = params[f"{self.head.name}.w"].dtype
        g = np.full(z_shape, 1.0 / np.prod(z_shape), dtype=dtype)
        signals = [None] * len(tape)
        for i in reversed(range(len(tape))):
            conv, cache, mask = tape[i]
            if mask is not None:
                g = nn.leaky_relu_backward(mask, g)
            signals[i] = g
            g = nn.conv2d_input_grad(cache, params[f"{conv.name}.w"], g)
        return g, signals

    def penalty_param_grads(self, params: dict, full_tape, signals, v: np.ndarray) -> dict:
        """Exact parameter gradient of <v, grad_x D(x)> with frozen masks.

        The input gradient u factors as u = A_1^T D_1 A_2^T ... r with A_k
        the k-th convolution, D_k the frozen leaky-ReLU slope, and r the
        mean-layer seed. <v, u> is linear in each W_k separately, so its
        W_k-gradient is the ordinary conv weight gradient evaluated with
        input t_k (v pushed forward through the frozen prefix) and output
        gradient r_k (the recorded backward signal). Biases do not enter u.
        """
        tape, _ = full_tape
        grads = {name: np.zeros_like(p) for name, p in params.items()}
        t = v
        for i, (conv, cache, mask) in enumerate(tape):
            x_in, stride, pad = cache
            w = params[f"{conv.name}.w"]
            gy_mat = signals[i].reshape(w.shape[0], -1)
            cols = nn.im2col(t, conv.k, stride, pad)
            grads[f"{conv.name}.w"] += (gy_mat @ cols.T).reshape(w.shape)
            if i + 1 < len(tape):
                z, _ = nn.conv2d_forward(t, w, None, stride, pad)
                t = np.where(mask, z, z * nn.LEAKY_SLOPE)
        return grads
