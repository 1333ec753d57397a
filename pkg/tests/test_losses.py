"""Objective terms: values frozen from hand derivations, gradients against
central finite differences."""

import numpy as np
import pytest

from conftest import fd_grad, rel_err
from refsr.losses import (
    LossWeights,
    clip_params,
    gradient_penalty,
    gram,
    loss_per,
    loss_rec,
    loss_texture,
    total_loss,
    wgan_losses,
)
from refsr.model import Critic


class TestLossRec:
    def test_identity(self):
        x = np.random.default_rng(0).random((3, 4, 4))
        value, grad = loss_rec(x, x.copy())
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_unit_offset(self):
        sr = np.zeros((2, 3, 3))
        hr = np.ones((2, 3, 3))
        value, _ = loss_rec(sr, hr)
        assert value == pytest.approx(1.0)

    def test_two_pixel_case(self):
        sr = np.array([0.5, 0.5])
        hr = np.array([0.2, 0.8])
        value, grad = loss_rec(sr, hr)
        assert value == pytest.approx(0.3)
        assert np.allclose(grad, [0.5, -0.5])

    def test_gradient_fd(self):
        rng = np.random.default_rng(1)
        sr = rng.standard_normal((2, 4, 4))
        hr = rng.standard_normal((2, 4, 4))
        _, grad = loss_rec(sr, hr)
        numeric = fd_grad(lambda: loss_rec(sr, hr)[0], sr)
        assert rel_err(grad, numeric) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_rec(np.zeros(3), np.zeros(4))


class TestLossPer:
    def test_identity(self):
        x = np.random.default_rng(2).standard_normal((3, 2, 2))
        value, grad = loss_per(x, x.copy())
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_scalar_channel(self):
        value, _ = loss_per(np.array([[[1.0]]]), np.array([[[3.0]]]))
        assert value == pytest.approx(2.0)

    def test_two_channel_norms(self):
        # channel residual norms 3 and 4 with V = 2*H*W = 4
        sr = np.zeros((2, 1, 2))
        hr = np.array([[[3.0, 0.0]], [[0.0, 4.0]]])
        value, _ = loss_per(sr, hr)
        assert value == pytest.approx((3.0 + 4.0) / 4.0)

    def test_gradient_fd(self):
        rng = np.random.default_rng(3)
        sr = rng.standard_normal((3, 4, 4))
        hr = rng.standard_normal((3, 4, 4))
        _, grad = loss_per(sr, hr)
        numeric = fd_grad(lambda: loss_per(sr, hr)[0], sr)
        assert rel_err(grad, numeric) < 1e-6


class TestGram:
    def test_hand_outer_product(self):
        f = np.array([[[2.0]], [[3.0]]])
        assert np.array_equal(gram(f), [[4.0, 6.0], [6.0, 9.0]])

    def test_zero_map(self):
        assert np.all(gram(np.zeros((3, 2, 2))) == 0.0)

    def test_single_channel_sum_of_squares(self):
        f = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert gram(f)[0, 0] == pytest.approx(30.0)

    def test_symmetric_psd(self):
        f = np.random.default_rng(4).standard_normal((5, 3, 3))
        g = gram(f)
        assert np.array_equal(g, g.T)
        assert np.linalg.eigvalsh(g).min() >= -1e-10


class TestLossTexture:
    def test_zero_at_fixed_point(self):
        rng = np.random.default_rng(5)
        phi = rng.standard_normal((3, 2, 2))
        sim = rng.random((2, 2))
        m_t = phi * sim[None]
        value, grad = loss_texture(phi, sim, m_t)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.all(grad == 0.0)

    def test_zero_sim(self):
        rng = np.random.default_rng(6)
        phi = rng.standard_normal((2, 2, 2))
        m_t = rng.standard_normal((2, 2, 2))
        value, grad = loss_texture(phi, np.zeros((2, 2)), m_t)
        volume = m_t.size
        expected = np.linalg.norm(gram(m_t)) / (4 * volume ** 2)
        assert value == pytest.approx(expected)
        assert np.all(grad == 0.0)

    def test_hand_two_channel_case(self):
        # weighted features (2,3) at 1x1 against zero target: ||G||_F = 13, V = 2
        phi = np.array([[[2.0]], [[3.0]]])
        value, _ = loss_texture(phi, np.ones((1, 1)), np.zeros((2, 1, 1)))
        assert value == pytest.approx(13.0 / 16.0)

    def test_gradient_fd(self):
        rng = np.random.default_rng(7)
        phi = rng.standard_normal((3, 3, 3))
        sim = rng.uniform(0.1, 0.9, size=(3, 3))  # strictly inside the clamp
        m_t = rng.standard_normal((3, 3, 3))
        _, grad = loss_texture(phi, sim, m_t)
        numeric = fd_grad(lambda: loss_texture(phi, sim, m_t)[0], phi)
        assert rel_err(grad, numeric) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_texture(np.zeros((2, 2, 2)), np.zeros((2, 2)), np.zeros((3, 2, 2)))


class TestWgan:
    def test_gen_adv_negated_mean(self):
        _, gen_adv = wgan_losses([0.0], [2.0, 4.0])
        assert gen_adv == pytest.approx(-3.0)

    def test_indistinguishable(self):
        core, _ = wgan_losses([1.0, 2.0], [1.0, 2.0])
        assert core == pytest.approx(0.0)

    def test_hand_case(self):
        core, _ = wgan_losses([1.0], [0.0])
        assert core == pytest.approx(-1.0)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            wgan_losses([], [1.0])

    def test_clip_params(self):
        params = {"w": np.array([0.5, -0.5, 0.005])}
        clip_params(params, 0.01)
        assert np.allclose(params["w"], [0.01, -0.01, 0.005])


def sum_critic():
    """D(x) = sum over a 1x2x2 input: all-ones 2x2 kernel, then the mean of
    the single output value."""
    crit = Critic(in_channels=1, widths=(), head_k=2)
    params = {"critic.head.w": np.ones((1, 1, 2, 2)), "critic.head.b": np.zeros(1)}
    return crit, params


class TestGradientPenalty:
    def test_sum_critic_penalty(self):
        crit, params = sum_critic()
        x = np.random.default_rng(8).random((1, 2, 2))
        value, grads = gradient_penalty(crit, params, [x], [x], gp_weight=10.0, seed=0)
        # gradient of a sum is all-ones: norm 2, penalty 10 * (2-1)^2
        assert value == pytest.approx(10.0)

    def test_identity_critic_zero_penalty(self):
        crit = Critic(in_channels=1, widths=(), head_k=1)
        params = {"critic.head.w": np.ones((1, 1, 1, 1)), "critic.head.b": np.zeros(1)}
        x = np.array([[[0.3]]])
        value, _ = gradient_penalty(crit, params, [x], [x], gp_weight=5.0, seed=0)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_param_grads_match_fd(self):
        crit = Critic(in_channels=2, widths=(4, 4))
        mp = crit.init_params(seed=3, dtype=np.float64)
        rng = np.random.default_rng(9)
        real = [rng.standard_normal((2, 8, 8)) for _ in range(2)]
        fake = [rng.standard_normal((2, 8, 8)) for _ in range(2)]
        value, grads = gradient_penalty(crit, mp.params, real, fake, gp_weight=10.0, seed=4)

        def f():
            v, _ = gradient_penalty(crit, mp.params, real, fake, gp_weight=10.0, seed=4)
            return v

        for name in ("critic.c0.w", "critic.c1.w", "critic.head.w"):
            numeric = fd_grad(f, mp.params[name], h=1e-6)
            assert rel_err(grads[name], numeric) < 1e-4, name

    def test_bias_grads_zero(self):
        crit = Critic(in_channels=1, widths=(4,))
        mp = crit.init_params(seed=5, dtype=np.float64)
        rng = np.random.default_rng(10)
        x = [rng.standard_normal((1, 8, 8))]
        y = [rng.standard_normal((1, 8, 8))]
        _, grads = gradient_penalty(crit, mp.params, x, y, seed=6)
        assert np.all(grads["critic.c0.b"] == 0.0)
        assert np.all(grads["critic.head.b"] == 0.0)

    def test_rejects_non_piecewise_linear(self):
        class Smooth:
            piecewise_linear = False

        with pytest.raises(ValueError):
            gradient_penalty(Smooth(), {}, [np.zeros((1, 2, 2))], [np.zeros((1, 2, 2))])


class TestTotalLoss:
    def test_rec_only(self):
        bundle = total_loss(1.0, 0.0, 0.0, 0.0, LossWeights())
        assert bundle.total == pytest.approx(1.0)

    def test_training_weights_composite(self):
        w = LossWeights(alpha=1e-4, beta=1e-6, lambda_=1e-4)
        bundle = total_loss(0.1, 10.0, 100.0, 5.0, w)
        assert bundle.total == pytest.approx(0.1016)

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0, LossWeights()).total == 0.0

    def test_linearity_per_component(self):
        w = LossWeights(alpha=0.5, beta=0.25, lambda_=0.125)
        base = total_loss(1.0, 2.0, 4.0, 8.0, w).total
        bumped = total_loss(1.0, 3.0, 4.0, 8.0, w).total
        assert bumped - base == pytest.approx(0.5)

    def test_bundle_invariant(self):
        w = LossWeights(alpha=0.3, beta=0.7, lambda_=0.9)
        b = total_loss(0.4, 1.7, -2.2, 3.3, w)
        recompute = b.rec + w.alpha * b.per + w.beta * b.adv + w.lambda_ * b.tex
        assert abs(b.total - recompute) <= 1e-12 * max(abs(b.total), 1.0)

    def test_gradient_combination(self):
        w = LossWeights(alpha=0.5, beta=0.0, lambda_=2.0)
        g = {"rec": np.ones(3), "per": np.full(3, 2.0), "adv": None, "tex": np.full(3, 4.0)}
        bundle = total_loss(1.0, 1.0, 1.0, 1.0, w, grads=g)
        assert np.allclose(bundle.grad_sr, 1.0 + 0.5 * 2.0 + 2.0 * 4.0)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)
