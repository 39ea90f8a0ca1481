import math

import numpy as np
import numpy.testing as npt
import pytest

from BKLibQSeld.exceptions import ConfigurationError, ShapeError
from BKLibQSeld.optim.losses import LossConfig, bce_loss, masked_mse_loss, seld_loss


class TestBce:
    def test_half_probability(self):
        loss, _ = bce_loss(np.full((4, 3), 0.5), np.ones((4, 3)))
        assert loss == pytest.approx(math.log(2))

    def test_exact_prediction_hits_clamp_floor(self):
        target = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss, grad = bce_loss(target.copy(), target)
        assert 0 <= loss <= 1.1e-7
        npt.assert_array_equal(grad, 0.0)

    def test_gradient_sign(self):
        _, grad = bce_loss(np.array([0.3, 0.7]), np.array([1.0, 0.0]))
        assert grad[0] < 0 < grad[1]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(np.full((2, 3), 0.5), np.ones((3, 2)))


class TestMaskedMse:
    def test_perfect_prediction(self, rng):
        target = rng.standard_normal((5, 6))
        loss, grad = masked_mse_loss(target.copy(), target, np.ones((5, 2)))
        assert loss == 0.0
        npt.assert_array_equal(grad, 0.0)

    def test_single_active_pair(self):
        pred = np.array([[1.0, 0.0, 0.0]])
        target = np.array([[0.0, 1.0, 0.0]])
        loss, _ = masked_mse_loss(pred, target, np.array([[1.0]]))
        assert loss == pytest.approx(2.0 / 3.0)

    def test_inactive_pairs_are_ignored(self):
        pred = np.array([[1.0, 0.0, 0.0, 9.0, 9.0, 9.0]])
        target = np.array([[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]])
        loss, grad = masked_mse_loss(pred, target, np.array([[1.0, 0.0]]))
        assert loss == pytest.approx(2.0 / 3.0)
        npt.assert_array_equal(grad[0, 3:], 0.0)

    def test_all_inactive_mask(self, rng):
        loss, grad = masked_mse_loss(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)), np.zeros((4, 2)))
        assert loss == 0.0
        npt.assert_array_equal(grad, 0.0)

    def test_mask_shape(self):
        with pytest.raises(ShapeError):
            masked_mse_loss(np.zeros((4, 6)), np.zeros((4, 6)), np.zeros((4, 3)))


class TestSeldLoss:
    @pytest.fixture
    def batch(self, rng):
        activity = (rng.random((2, 5, 3)) < 0.5).astype(float)
        activity[0, 0, 0] = 1.0
        doa = rng.standard_normal((2, 5, 3, 3))
        doa /= np.linalg.norm(doa, axis=-1, keepdims=True)
        outputs = (rng.uniform(0.1, 0.9, (2, 5, 3)), np.tanh(rng.standard_normal((2, 5, 9))))
        return outputs, (activity, doa * activity[..., None])

    def test_weighted_combination(self, batch):
        outputs, labels = batch
        loss = seld_loss(outputs, labels, LossConfig(doa_weight=5.0))
        assert loss.total == pytest.approx(loss.sed + 5.0 * loss.doa)
        assert loss.grad_sed.shape == (2, 5, 3)
        assert loss.grad_doa.shape == (2, 5, 9)

    def test_zero_weight_ignores_doa(self, batch):
        outputs, labels = batch
        loss = seld_loss(outputs, labels, LossConfig(doa_weight=0.0))
        assert loss.total == pytest.approx(loss.sed)
        npt.assert_array_equal(loss.grad_doa, 0.0)

    def test_negative_weight(self):
        with pytest.raises(ConfigurationError):
            LossConfig(doa_weight=-1.0)
