import math

import numpy as np
import pytest
import torch

from voxprofile.errors import ShapeError
from voxprofile.speaker_head import SpeakerHead, ce_loss, classify_speaker, fit_linear_probe


class TestClassify:
    def test_zero_input_zero_params_uniform(self):
        head = SpeakerHead(4, seed=0)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        probs = classify_speaker(torch.zeros(768), head)
        torch.testing.assert_close(probs, torch.full((4,), 0.25))

    def test_probabilities_sum_to_one(self, rng):
        head = SpeakerHead(10, seed=1)
        probs = classify_speaker(rng.standard_normal(768).astype(np.float32), head)
        assert abs(float(probs.sum()) - 1.0) < 1e-6
        assert (probs >= 0).all()

    def test_softmax_of_known_logits(self):
        head = SpeakerHead(2, width=2, seed=0)
        with torch.no_grad():
            head.linear.weight.copy_(torch.eye(2))
            head.linear.bias.zero_()
        probs = classify_speaker(torch.tensor([2.0, 0.0]), head)
        expected = [math.exp(2) / (math.exp(2) + 1), 1 / (math.exp(2) + 1)]
        torch.testing.assert_close(probs, torch.tensor(expected), atol=1e-4, rtol=0)
        assert abs(float(probs[0]) - 0.8808) < 1e-3

    def test_wrong_width_rejected(self):
        head = SpeakerHead(4)
        with pytest.raises(ShapeError):
            head(torch.zeros(512))

    def test_single_speaker_rejected(self):
        with pytest.raises(ShapeError):
            SpeakerHead(1)

    def test_presoftmax_linearity(self, rng):
        head = SpeakerHead(6, seed=2)
        v1 = torch.from_numpy(rng.standard_normal(768)).float()
        v2 = torch.from_numpy(rng.standard_normal(768)).float()
        a, b = 0.3, 1.7
        lhs = head.logits(a * v1 + b * v2)
        rhs = a * head.logits(v1) + b * head.logits(v2) - (a + b - 1) * head.linear.bias
        torch.testing.assert_close(lhs, rhs, atol=1e-5, rtol=1e-5)


class TestCeLoss:
    def test_known_value(self):
        y = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
        y_hat = torch.tensor([0.2, 0.5, 0.3], dtype=torch.float64)
        loss = ce_loss(y, y_hat)
        assert abs(float(loss) - (-math.log(0.5))) < 1e-9
        assert abs(float(loss) - 0.6931) < 1e-4

    def test_perfect_prediction_zero(self):
        y = torch.tensor([0.0, 1.0, 0.0])
        assert float(ce_loss(y, y)) == 0.0

    def test_uniform_over_ten(self):
        y = torch.zeros(10)
        y[3] = 1.0
        loss = ce_loss(y, torch.full((10,), 0.1))
        assert abs(float(loss) - math.log(10)) < 1e-6
        assert abs(float(loss) - 2.3026) < 1e-4

    def test_nonnegative_random(self, rng):
        for _ in range(50):
            c = int(rng.integers(2, 12))
            y = torch.zeros(c)
            y[int(rng.integers(c))] = 1.0
            raw = rng.random(c)
            y_hat = torch.from_numpy(raw / raw.sum())
            assert float(ce_loss(y, y_hat)) >= 0.0

    def test_batch_mean(self):
        y = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        y_hat = torch.tensor([[0.5, 0.5], [0.25, 0.75]])
        expected = (-math.log(0.5) - math.log(0.75)) / 2
        assert abs(float(ce_loss(y, y_hat)) - expected) < 1e-6

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ce_loss(torch.zeros(3), torch.zeros(4))

    def test_clamped_log_never_infinite(self):
        loss = ce_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))
        assert torch.isfinite(loss)


class TestLinearProbe:
    def test_separable_clusters_reach_full_accuracy(self, rng):
        centers = rng.standard_normal((4, 32)) * 5
        x_train = np.concatenate([c + 0.1 * rng.standard_normal((10, 32)) for c in centers])
        y_train = np.repeat(np.arange(4), 10)
        x_eval = np.concatenate([c + 0.1 * rng.standard_normal((5, 32)) for c in centers])
        y_eval = np.repeat(np.arange(4), 5)
        acc = fit_linear_probe(x_train, y_train, x_eval, y_eval, steps=200)
        assert acc == 1.0

    def test_deterministic(self, rng):
        x = rng.standard_normal((20, 16))
        y = np.arange(20) % 3
        a = fit_linear_probe(x, y, x, y, seed=5)
        b = fit_linear_probe(x, y, x, y, seed=5)
        assert a == b
