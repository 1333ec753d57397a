"""Training objective: reconstruction, perceptual, adversarial (WGAN with
gradient penalty), and Gram-matrix texture terms, with analytic gradients.

All loss functions return (value, gradient) pairs. The gradient penalty
exploits the critic being piecewise-linear: with activation masks frozen,
the critic's input gradient is locally constant in the input, so the
second-order parameter gradients come out exactly from one extra
forward-shaped pass (see Critic.penalty_param_grads).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMap

DEFAULT_GP_WEIGHT = 10.0
WGAN_CLIP = 0.01


def _arr(x) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.data
    if hasattr(x, "data") and isinstance(getattr(x, "data"), np.ndarray):
        return x.data
    return np.asarray(x)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the perceptual, adversarial, and texture terms."""

    alpha: float = 1e-4
    beta: float = 1e-6
    lambda_: float = 1e-4

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBundle:
    rec: float
    per: float
    adv: float
    tex: float
    total: float
    grad_sr: np.ndarray | None = None


def loss_rec(sr, hr):
    """Mean absolute difference; subgradient sign(sr - hr)/N with sign(0)=0."""
    a, b = _arr(sr), _arr(hr)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def loss_per(phi_sr, phi_hr):
    """Sum of per-channel Frobenius residual norms over the tensor volume."""
    a, b = _arr(phi_sr), _arr(phi_hr)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    volume = a.size
    resid = b - a  # phi(HR) - phi(SR), per channel
    norms = np.sqrt(np.sum(resid.reshape(resid.shape[0], -1) ** 2, axis=1))
    value = float(norms.sum() / volume)
    grad = np.zeros_like(a)
    nonzero = norms > 0
    grad[nonzero] = -resid[nonzero] / norms[nonzero, None, None] / volume
    return value, grad


def gram(f) -> np.ndarray:
    """C x C Gram matrix of the channel-unrolled map: G = F F^T."""
    x = _arr(f)
    if x.ndim != 3:
        raise ValueError(f"need a CxHxW map, got shape {x.shape}")
    flat = x.reshape(x.shape[0], -1)
    return flat @ flat.T


def loss_texture(phi_sr, sim_map, m_t):
    """Frobenius distance between Grams of the similarity-weighted SR
    features and the swapped texture map, over 4 V^2."""
    a = _arr(phi_sr)
    target = _arr(m_t)
    sim = np.asarray(sim_map)
    if a.shape != target.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {target.shape}")
    if sim.shape != a.shape[1:]:
        raise ValueError(f"similarity grid {sim.shape} does not match map {a.shape[1:]}")
    weights = np.clip(sim, 0.0, 1.0).astype(a.dtype)
    weighted = a * weights[None, :, :]
    volume = a.size
    diff = gram(weighted) - gram(target)
    norm = float(np.sqrt(np.sum(diff ** 2)))
    scale = 1.0 / (4.0 * volume * volume)
    value = norm * scale
    if norm == 0.0:
        return value, np.zeros_like(a)
    c = a.shape[0]
    flat = weighted.reshape(c, -1)
    grad_flat = (2.0 * scale / norm) * (diff @ flat)
    grad = grad_flat.reshape(a.shape) * weights[None, :, :]
    return value, grad.astype(a.dtype)


def wgan_losses(d_real, d_fake):
    """(critic_core, gen_adv): critic minimizes mean(fake) - mean(real),
    the generator's adversarial term is -mean(fake)."""
    real = np.asarray(d_real, dtype=np.float64).ravel()
    fake = np.asarray(d_fake, dtype=np.float64).ravel()
    if real.size == 0 or fake.size == 0:
        raise ValueError("empty score batch")
    critic_core = float(fake.mean() - real.mean())
    gen_adv = float(-fake.mean())
    return critic_core, gen_adv


def clip_params(params: dict, limit: float = WGAN_CLIP) -> None:
    """Plain-WGAN weight clipping, the fallback regime when GP is disabled."""
    for v in params.values():
        np.clip(v, -limit, limit, out=v)


def gradient_penalty(critic, params, real_batch, fake_batch, gp_weight=DEFAULT_GP_WEIGHT, seed=0):
    """gp_weight * E[(||grad_xhat D(xhat)||_2 - 1)^2] over seeded per-sample
    interpolates, with exact critic parameter gradients.

    Requires a piecewise-linear critic; anything else would break the
    frozen-mask second pass.
    """
    if not getattr(critic, "piecewise_linear", False):
        raise ValueError("gradient penalty requires a piecewise-linear critic")
    real = list(real_batch)
    fake = list(fake_batch)
    if len(real) != len(fake) or not real:
        raise ValueError("real/fake batches must be equal-length and nonempty")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(real)
    value = 0.0
    grads = None
    for r, f in zip(real, fake):
        r = np.asarray(r)
        f = np.asarray(f)
        eps = rng.uniform()
        xhat = (eps * r + (1.0 - eps) * f).astype(r.dtype)
        _, tape = critic.forward(params, xhat)
        u, backtape = critic.input_gradient(params, tape)
        norm = float(np.sqrt(np.sum(u.astype(np.float64) ** 2)))
        value += (norm - 1.0) ** 2
        if norm > 0.0:
            coeff = gp_weight * 2.0 * (norm - 1.0) / (norm * n)
            v = (coeff * u).astype(u.dtype)
            sample_grads = critic.penalty_param_grads(params, tape, backtape, v)
            if grads is None:
                grads = sample_grads
            else:
                for name in grads:
                    grads[name] += sample_grads[name]
    if grads is None:
        grads = {name: np.zeros_like(p) for name, p in params.items()}
    else:
        for name, p in params.items():
            if name not in grads:
                grads[name] = np.zeros_like(p)
    return gp_weight * value / n, grads


def total_loss(rec, per, adv, tex, weights: LossWeights, grads: dict | None = None) -> LossBundle:
    """Weighted composite objective; gradients combine with the same weights.

    grads, when given, maps component names to gradients in one common
    space (typically with respect to the SR image).
    """
    total = rec + weights.alpha * per + weights.beta * adv + weights.lambda_ * tex
    grad_total = None
    if grads is not None:
        scale = {"rec": 1.0, "per": weights.alpha, "adv": weights.beta, "tex": weights.lambda_}
        for name, g in grads.items():
            if name not in scale:
                raise ValueError(f"unknown loss component {name!r}")
            if g is None or scale[name] == 0.0:
                continue
            term = scale[name] * g
            grad_total = term if grad_total is None else grad_total + term
    return LossBundle(rec=rec, per=per, adv=adv, tex=tex, total=total, grad_sr=grad_total)
