"""Loss identities with frozen oracles, plus the multi-scale discriminator."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gpen.losses import (
    Discriminator,
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    feature_matching_loss,
    r1_penalty,
    total_loss,
)
from helpers import tiny_config

LN2 = 0.6931471805599453  # softplus(0)
SOFTPLUS_2 = 2.1269280110429722  # log(1 + e^2)


class TestAdversarialLosses:
    def test_zero_score_oracles(self):
        zero = torch.zeros(1, dtype=torch.float64)
        assert abs(float(adversarial_loss_g(zero)) - LN2) < 1e-12
        assert abs(float(adversarial_loss_d(zero, zero)) - 2 * LN2) < 1e-12

    def test_generator_loss_oracle(self):
        score = torch.tensor([-2.0], dtype=torch.float64)
        assert abs(float(adversarial_loss_g(score)) - SOFTPLUS_2) < 1e-12

    def test_discriminator_loss_oracle(self):
        real = torch.tensor([1.0], dtype=torch.float64)
        fake = torch.tensor([-1.0], dtype=torch.float64)
        # softplus(-1) twice
        expected = 2 * math.log(1 + math.exp(-1.0))
        assert abs(float(adversarial_loss_d(real, fake)) - expected) < 1e-9

    @given(st.floats(-80.0, 80.0))
    @settings(max_examples=100, deadline=None)
    def test_softplus_identity(self, d):
        # softplus(d) - softplus(-d) == d holds across the whole stable range
        score = torch.tensor([d], dtype=torch.float64)
        g = float(adversarial_loss_g(-score))  # softplus(d)
        flipped = float(adversarial_loss_g(score))  # softplus(-d)
        assert abs((g - flipped) - d) < 1e-6

    @given(st.lists(st.floats(-30.0, 30.0), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative(self, scores):
        s = torch.tensor(scores)
        assert float(adversarial_loss_g(s)) >= 0.0
        assert float(adversarial_loss_d(s, -s)) >= 0.0

    def test_batch_mean(self):
        s = torch.tensor([0.0, 0.0, -2.0])
        expected = (2 * LN2 + SOFTPLUS_2) / 3
        assert abs(float(adversarial_loss_g(s)) - expected) < 1e-6


class TestContentLoss:
    def test_identical_is_zero(self):
        x = torch.rand(1, 3, 8, 8)
        assert float(content_loss(x, x)) == 0.0

    def test_unit_offset(self):
        a = torch.ones(1, 3, 4, 4)
        b = torch.zeros(1, 3, 4, 4)
        assert float(content_loss(a, b)) == 1.0

    def test_symmetric(self):
        a = torch.rand(2, 3, 8, 8)
        b = torch.rand(2, 3, 8, 8)
        assert float(content_loss(a, b)) == float(content_loss(b, a))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            content_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 4, 4))


class TestFeatureMatching:
    def test_frozen_example(self):
        # single layer [[0, 0]] vs [[3, 4]]: ||(3,4)|| / sqrt(2)
        a = [torch.tensor([[0.0, 0.0]], dtype=torch.float64)]
        b = [torch.tensor([[3.0, 4.0]], dtype=torch.float64)]
        assert abs(float(feature_matching_loss(a, b)) - 3.5355339059327378) < 1e-12

    def test_identical_is_zero(self):
        feats = [torch.rand(1, 4, 8, 8), torch.rand(1, 8, 4, 4)]
        assert float(feature_matching_loss(feats, feats)) == 0.0

    def test_linear_in_difference(self):
        a = [torch.rand(1, 4, 8, 8)]
        b = [torch.zeros(1, 4, 8, 8)]
        one = float(feature_matching_loss(a, b))
        doubled = float(feature_matching_loss([2 * a[0]], b))
        assert abs(doubled - 2 * one) < 1e-5

    def test_size_normalization(self):
        # a uniform per-element gap of d contributes |d| regardless of layer size
        for shape in ((1, 2, 2, 2), (1, 8, 16, 16)):
            a = [torch.full(shape, 0.75)]
            b = [torch.zeros(shape)]
            assert abs(float(feature_matching_loss(a, b)) - 0.75) < 1e-6

    def test_sums_over_layers(self):
        a = [torch.full((1, 4), 1.0), torch.full((1, 9), 2.0)]
        b = [torch.zeros(1, 4), torch.zeros(1, 9)]
        assert abs(float(feature_matching_loss(a, b)) - 3.0) < 1e-6

    def test_mismatch_rejected(self):
        a = [torch.zeros(1, 4)]
        with pytest.raises(ValueError):
            feature_matching_loss(a, [torch.zeros(1, 5)])
        with pytest.raises(ValueError):
            feature_matching_loss(a, [torch.zeros(1, 4), torch.zeros(1, 4)])


class TestTotalLoss:
    def test_frozen_combination(self):
        # 1 + 1*2 + 0.02*3 with the default weights
        value = float(total_loss(1.0, 2.0, 3.0, LossWeights()))
        assert abs(value - 3.06) < 1e-9

    def test_weights_applied(self):
        w = LossWeights(alpha=2.5, beta=0.5)
        value = float(total_loss(torch.tensor(1.0), torch.tensor(4.0), torch.tensor(2.0), w))
        assert abs(value - (1 + 2.5 * 4 + 0.5 * 2)) < 1e-9

    def test_accepts_python_floats(self):
        assert abs(float(total_loss(1.0, 2.0, 3.0, LossWeights())) - 3.06) < 1e-9

    def test_default_weights(self):
        w = LossWeights()
        assert w.alpha == 1.0 and w.beta == 0.02


class _LinearScorer(torch.nn.Module):
    """Stand-in discriminator with a known gradient: score = sum(c * x)."""

    def __init__(self, c):
        super().__init__()
        self.c = c

    def forward(self, x):
        score = (self.c * x).sum(dim=(1, 2, 3))

        class Out:
            pass

        out = Out()
        out.score = score
        out.features = []
        return out


class TestR1Penalty:
    def test_linear_scorer_closed_form(self):
        torch.manual_seed(0)
        c = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        real = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        penalty = r1_penalty(_LinearScorer(c), real)
        # gradient of sum(c*x) wrt x is c, so the penalty is ||c||^2 for every sample
        assert abs(float(penalty) - float((c ** 2).sum())) < 1e-9

    def test_constant_scorer_is_zero(self):
        penalty = r1_penalty(_LinearScorer(torch.zeros(1, 3, 4, 4)), torch.rand(1, 3, 4, 4))
        assert float(penalty) == 0.0

    def test_real_discriminator_finite_positive(self):
        torch.manual_seed(1)
        disc = Discriminator(tiny_config())
        penalty = r1_penalty(disc, torch.rand(1, 3, 16, 16))
        assert math.isfinite(float(penalty)) and float(penalty) >= 0.0


class TestDiscriminator:
    def test_score_and_taps(self):
        for resolution in (16, 32):
            config = tiny_config(resolution)
            disc = Discriminator(config)
            out = disc(torch.rand(2, 3, resolution, resolution))
            assert out.score.shape == (2,)
            assert len(out.features) == config.num_blocks
            for feat in out.features:
                assert feat.shape[0] == 2

    def test_feature_resolutions_descend(self):
        config = tiny_config(32)
        out = Discriminator(config)(torch.rand(1, 3, 32, 32))
        sides = [f.shape[-1] for f in out.features]
        assert sides == sorted(sides, reverse=True)

    def test_deterministic(self):
        torch.manual_seed(3)
        disc = Discriminator(tiny_config())
        x = torch.rand(1, 3, 16, 16)
        assert torch.equal(disc(x).score, disc(x).score)

    def test_input_shape_validated(self):
        disc = Discriminator(tiny_config(16))
        with pytest.raises(ValueError):
            disc(torch.rand(1, 3, 32, 32))

    def test_gradient_reaches_input(self):
        torch.manual_seed(4)
        disc = Discriminator(tiny_config())
        x = torch.rand(1, 3, 16, 16, requires_grad=True)
        disc(x).score.sum().backward()
        assert x.grad is not None and float(x.grad.abs().sum()) > 0.0
