import numpy as np
import numpy.testing as npt
import pytest
from scipy.signal import correlate2d

from BKLibQSeld.exceptions import ConfigurationError, ShapeError
from BKLibQSeld.layers.activation import SplitActivation, split_activation
from BKLibQSeld.layers.batch_norm import SplitBatchNorm, split_batch_norm_forward
from BKLibQSeld.layers.conv import Conv2d, conv2d_backward, conv2d_forward
from BKLibQSeld.layers.dense import Dense, dense_backward
from BKLibQSeld.layers.layer_base import LayerStack
from BKLibQSeld.layers.pooling import MaxPoolFreq, max_pool_freq
from BKLibQSeld.layers.qconv import QConv2d, qconv2d_backward, qconv2d_forward
from BKLibQSeld.layers.qdense import QDense, qdense_forward
from BKLibQSeld.layers.recurrent import BiGRU, bigru_forward
from BKLibQSeld.layers.reshape import PlanesToSequence
from BKLibQSeld.optim.gradcheck import gradcheck, gradcheck_cases
from BKLibQSeld.quaternion import QuatTensor, to_real_block

LAYER_CASES = ("qconv2d", "conv2d", "qdense", "dense", "activation", "batch_norm", "pooling", "bigru", "reshape")


def _center_tap_layer(tap):
    layer = QConv2d(1, 1, np.random.default_rng(0), name="center")
    layer.params["kernel"][...] = 0.0
    layer.params["kernel"][:, 0, 0, 1, 1] = tap
    return layer


class TestQConv2d:
    def test_identity_center_tap(self):
        x = QuatTensor(np.array([1.0, 2, 3, 4]).reshape(4, 1, 1, 1))
        y = qconv2d_forward(_center_tap_layer([1, 0, 0, 0]), x)
        npt.assert_array_equal(y.data, x.data)

    def test_pure_i_center_tap(self):
        x = QuatTensor(np.array([1.0, 2, 3, 4]).reshape(4, 1, 1, 1))
        y = qconv2d_forward(_center_tap_layer([0, 1, 0, 0]), x)
        npt.assert_array_equal(y.data.reshape(4), [-2, 1, -4, 3])

    def test_matches_real_block_convolution(self, rng):
        layer = QConv2d(2, 3, rng)
        layer.params["bias"][...] = rng.standard_normal((4, 3))
        x = rng.standard_normal((4, 2, 5, 6))
        y = qconv2d_forward(layer, QuatTensor(x)).data
        assert y.shape == (4, 3, 5, 6)

        kernel, bias = layer.params["kernel"], layer.params["bias"]
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros_like(y)
        for p in range(3):
            for t in range(5):
                for f in range(6):
                    acc = bias[:, p].copy()
                    for c in range(2):
                        for u in range(3):
                            for v in range(3):
                                block = to_real_block(QuatTensor(kernel[:, p, c, u, v].reshape(4, 1, 1)))
                                acc += block @ padded[:, c, t + u, f + v]
                    expected[:, p, t, f] = acc
        assert np.max(np.abs(y - expected)) < 1e-12

    def test_sum_loss_grad_with_identity_tap(self):
        layer = _center_tap_layer([1, 0, 0, 0])
        x = QuatTensor(np.random.default_rng(1).standard_normal((4, 1, 4, 5)))
        grad_in, grad_kernel, grad_bias = qconv2d_backward(layer, x, QuatTensor(np.ones((4, 1, 4, 5))))
        npt.assert_array_equal(grad_in.data, np.ones((4, 1, 4, 5)))
        npt.assert_array_equal(grad_bias, np.full((4, 1), 20.0))
        assert grad_kernel.shape == (4, 1, 1, 3, 3)

    def test_batched_input_shape(self, rng):
        layer = QConv2d(2, 4, rng)
        y = layer.forward(rng.standard_normal((4, 3, 2, 5, 8)))
        assert y.shape == (4, 3, 4, 5, 8)

    def test_rejects_wrong_channels(self, rng):
        with pytest.raises(ShapeError):
            QConv2d(2, 3, rng).forward(np.zeros((4, 1, 3, 5, 6)))

    def test_parameter_count(self, rng):
        # 4·(C·3·3·P) + 4·P
        assert QConv2d(2, 3, rng).count_parameters() == 4 * (2 * 9 * 3) + 4 * 3


class TestConv2d:
    def test_matches_cross_correlation(self, rng):
        layer = Conv2d(2, 3, rng)
        layer.params["bias"][...] = rng.standard_normal(3)
        x = rng.standard_normal((2, 2, 5, 6))
        y = conv2d_forward(layer, x)
        for b in range(2):
            for p in range(3):
                expected = sum(correlate2d(x[b, c], layer.params["kernel"][p, c], mode="same") for c in range(2))
                npt.assert_allclose(y[b, p], expected + layer.params["bias"][p], atol=1e-12)

    def test_backward_shapes(self, rng):
        layer = Conv2d(2, 3, rng)
        x = rng.standard_normal((2, 2, 5, 6))
        grad_in, grad_kernel, grad_bias = conv2d_backward(layer, x, np.ones((2, 3, 5, 6)))
        assert grad_in.shape == x.shape
        assert grad_kernel.shape == (3, 2, 3, 3)
        npt.assert_allclose(grad_bias, np.full(3, 60.0))


class TestSplitActivation:
    def test_relu(self):
        q = QuatTensor(np.array([-1.0, 2, -3, 4]).reshape(4, 1))
        npt.assert_array_equal(split_activation(q, "relu").data.reshape(4), [0, 2, 0, 4])

    def test_linear_is_identity(self, rng):
        q = QuatTensor(rng.standard_normal((4, 3)))
        npt.assert_array_equal(split_activation(q, "linear").data, q.data)

    def test_tanh_saturates(self):
        q = QuatTensor(np.array([0.0, 50.0, -50.0, 0.0]).reshape(4, 1))
        npt.assert_allclose(split_activation(q, "tanh").data.reshape(4), [0, 1, -1, 0], atol=1e-12)

    def test_relu_subgradient_at_zero(self):
        layer = SplitActivation("relu")
        layer.forward(np.array([0.0, 1.0, -1.0]))
        npt.assert_array_equal(layer.backward(np.ones(3)), [0.0, 1.0, 0.0])

    def test_unknown_activation(self):
        with pytest.raises(ConfigurationError):
            SplitActivation("softplus")


class TestSplitBatchNorm:
    def test_constant_plane_gives_zeros(self):
        bn = SplitBatchNorm(2)
        y = split_batch_norm_forward(bn, QuatTensor(np.full((4, 3, 2, 4, 5), 3.0)), "train")
        npt.assert_array_equal(y.data, 0.0)

    def test_standardized_plane_unchanged(self, rng):
        x = rng.standard_normal((4, 3, 2, 4, 5))
        mean = x.mean(axis=(1, 3, 4), keepdims=True)
        std = x.std(axis=(1, 3, 4), keepdims=True)
        x = (x - mean) / std
        y = split_batch_norm_forward(SplitBatchNorm(2), QuatTensor(x), "train")
        npt.assert_allclose(y.data, x, atol=1e-6)

    def test_eval_uses_running_stats(self, rng):
        bn = SplitBatchNorm(2)
        bn.buffers["running_mean"][...] = rng.standard_normal((4, 2))
        bn.params["beta"][...] = rng.standard_normal((4, 2))
        x = np.broadcast_to(bn.buffers["running_mean"][:, None, :, None, None], (4, 3, 2, 4, 5)).copy()
        y = split_batch_norm_forward(bn, QuatTensor(x), "eval")
        npt.assert_allclose(y.data, np.broadcast_to(bn.params["beta"][:, None, :, None, None], y.data.shape))

    def test_running_stats_update(self, rng):
        bn = SplitBatchNorm(1, momentum=0.1)
        x = rng.standard_normal((4, 2, 1, 3, 4)) + 2.0
        bn.forward(x)
        npt.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=(1, 3, 4)))
        unbiased = x.var(axis=(1, 3, 4), ddof=1)
        npt.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * unbiased)

    def test_batch_of_one_in_train_mode(self):
        with pytest.raises(ConfigurationError):
            SplitBatchNorm(2).forward(np.zeros((4, 1, 2, 3, 4)))

    def test_batch_of_one_in_eval_mode(self):
        y = SplitBatchNorm(2).eval().forward(np.zeros((4, 1, 2, 3, 4)))
        assert y.shape == (4, 1, 2, 3, 4)


class TestMaxPoolFreq:
    def test_pool_values(self):
        x = QuatTensor(np.tile(np.array([1.0, 3, 2, 0]), (4, 1, 1, 1)))
        out, indices = max_pool_freq(x, 2)
        npt.assert_array_equal(out.data, np.tile([3.0, 2.0], (4, 1, 1, 1)))
        npt.assert_array_equal(indices[0, 0, 0], [1, 0])

    def test_factor_one_is_identity(self, rng):
        x = QuatTensor(rng.standard_normal((4, 2, 3, 6)))
        out, _ = max_pool_freq(x, 1)
        npt.assert_array_equal(out.data, x.data)

    def test_indivisible_bins(self, rng):
        with pytest.raises(ConfigurationError):
            max_pool_freq(QuatTensor(rng.standard_normal((4, 2, 3, 5))), 2)

    def test_gradient_routed_to_argmax(self):
        layer = MaxPoolFreq(2)
        layer.forward(np.array([1.0, 3, 2, 0]).reshape(1, 1, 1, 1, 4))
        grad = layer.backward(np.ones((1, 1, 1, 1, 2)))
        npt.assert_array_equal(grad.reshape(4), [0, 1, 1, 0])


class TestQDense:
    def test_identity_weights(self, rng):
        layer = QDense(3, 3, rng)
        layer.params["weight"][...] = 0.0
        layer.params["weight"][0] = np.eye(3)
        x = QuatTensor(rng.standard_normal((4, 3)))
        npt.assert_allclose(qdense_forward(layer, x).data, x.data, atol=1e-15)

    def test_single_weight_is_hamilton_product(self, rng):
        layer = QDense(1, 1, rng)
        layer.params["weight"][...] = np.array([1.0, 2, 3, 4]).reshape(4, 1, 1)
        y = qdense_forward(layer, QuatTensor(np.array([5.0, 6, 7, 8]).reshape(4, 1)))
        npt.assert_array_equal(y.data.reshape(4), [-60, 12, 30, 24])

    def test_batched_shape(self, rng):
        y = QDense(3, 2, rng, "tanh").forward(rng.standard_normal((4, 5, 7, 3)))
        assert y.shape == (4, 5, 7, 2)
        assert np.all(np.abs(y) < 1)


class TestDense:
    def test_sigmoid_range_and_grads(self, rng):
        layer = Dense(6, 4, rng, "sigmoid")
        x = rng.standard_normal((3, 5, 6))
        y = layer.forward(x)
        assert y.shape == (3, 5, 4)
        assert np.all((y > 0) & (y < 1))
        grad_in, grad_w, grad_b = dense_backward(layer, x, np.ones_like(y))
        assert grad_in.shape == x.shape
        assert grad_w.shape == (4, 6)
        assert grad_b.shape == (4,)


class TestBiGRU:
    def test_zero_weights_give_zero_output(self, rng):
        layer = BiGRU(5, 4, rng)
        for p in layer.params.values():
            p[...] = 0.0
        out = bigru_forward(layer, rng.standard_normal((6, 5)))
        npt.assert_array_equal(out, np.zeros((6, 8)))

    def test_single_frame_directions_agree(self, rng):
        layer = BiGRU(5, 4, rng)
        for key in ("w_ih", "w_hh", "b_ih", "b_hh"):
            layer.params[f"{key}_bw"][...] = layer.params[f"{key}_fw"]
        frame = rng.standard_normal((1, 5))
        out = bigru_forward(layer, frame)
        npt.assert_array_equal(out[:, :4], out[:, 4:])
        npt.assert_array_equal(out, bigru_forward(layer, frame))

    def test_output_shape(self, rng):
        assert BiGRU(5, 3, rng).forward(rng.standard_normal((2, 7, 5))).shape == (2, 7, 6)

    def test_rejects_wrong_input_size(self, rng):
        with pytest.raises(ShapeError):
            BiGRU(5, 3, rng).forward(np.zeros((2, 7, 4)))


class TestPlanesToSequence:
    def test_layout(self, rng):
        x = rng.standard_normal((4, 2, 3, 5, 2))
        layer = PlanesToSequence()
        y = layer.forward(x)
        assert y.shape == (2, 5, 2 * 4 * 3)
        # frame (b, t): por bin f, los K·C mapas en orden (k, c)
        assert y[1, 3, 1 * 12 + 2 * 3 + 1] == x[2, 1, 1, 3, 1]
        npt.assert_array_equal(layer.backward(y), x)


class TestLayerState:
    def test_stack_collects_qualified_names(self, rng):
        stack = LayerStack("net", [QConv2d(2, 3, rng, name="c1"), SplitBatchNorm(3, name="bn1")])
        assert set(stack.state()) == {"c1.kernel", "c1.bias", "bn1.gamma", "bn1.beta",
                                      "bn1.running_mean", "bn1.running_var"}
        assert set(stack.parameters()) == {"c1.kernel", "c1.bias", "bn1.gamma", "bn1.beta"}

    def test_load_state_validates(self, rng):
        layer = QConv2d(2, 3, rng, name="c1")
        state = {k: v.copy() for k, v in layer.state().items()}
        state["c1.bias"] = np.zeros((4, 2))
        with pytest.raises(ShapeError):
            layer.load_state(state)
        with pytest.raises(KeyError):
            layer.load_state({"c1.kernel": layer.params["kernel"]})

    def test_gradients_accumulate_until_zero_grad(self, rng):
        layer = Dense(3, 2, rng)
        x = rng.standard_normal((4, 3))
        for _ in range(2):
            layer.forward(x)
            layer.backward(np.ones((4, 2)))
        npt.assert_allclose(layer.grads["bias"], np.full(2, 8.0))
        layer.zero_grad()
        npt.assert_array_equal(layer.grads["bias"], 0.0)


@pytest.mark.parametrize("name", LAYER_CASES)
def test_layer_gradients(name):
    case = gradcheck_cases(seed=11)[name]()
    report = gradcheck(case.layer, case.x, case.loss_fn, max_entries=case.max_entries)
    assert report.checked > 0
    assert report.max_rel_err < 1e-6, (name, report.worst_param, report.max_rel_err)


def _block_convolution(kernel, bias, x):
    """Convolución same por bloques reales 4×4, una matriz ``[4P, 4C]`` por posición del kernel."""
    _, filters, channels, _, _ = kernel.shape
    _, _, frames, bins = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((4 * filters, frames * bins))
    for u in range(3):
        for v in range(3):
            block = to_real_block(QuatTensor(kernel[..., u, v]))
            patch = padded[:, :, u:u + frames, v:v + bins].reshape(4 * channels, -1)
            out += block @ patch
    return out.reshape(4, filters, frames, bins) + bias[:, :, None, None]


def test_qconv_matches_block_convolution_on_random_shapes():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        channels, filters = rng.integers(1, 4, size=2)
        frames, bins = rng.integers(1, 7, size=2)
        layer = QConv2d(int(channels), int(filters), rng)
        layer.params["bias"][...] = rng.standard_normal((4, filters))
        x = rng.standard_normal((4, channels, frames, bins))
        y = qconv2d_forward(layer, QuatTensor(x)).data
        expected = _block_convolution(layer.params["kernel"], layer.params["bias"], x)
        assert np.max(np.abs(y - expected)) < 1e-12, (channels, filters, frames, bins)


def _random_layer_case(name, rng):
    b, c, t = (int(n) for n in rng.integers(1, 4, size=3))
    f = int(rng.integers(2, 6))
    d, q = (int(n) for n in rng.integers(2, 5, size=2))
    if name == "qconv2d":
        return QConv2d(c, q, rng), rng.standard_normal((4, b, c, t, f))
    if name == "conv2d":
        return Conv2d(c, q, rng), rng.standard_normal((1, b, c, t, f))
    if name == "qdense":
        return QDense(d, q, rng, "tanh"), rng.standard_normal((4, b, t, d))
    if name == "dense":
        return Dense(d, q, rng, "sigmoid"), rng.standard_normal((b, t, d))
    if name == "activation":
        return SplitActivation("relu"), rng.standard_normal((4, b, c, t, f))
    if name == "batch_norm":
        return SplitBatchNorm(c), rng.standard_normal((4, b + 1, c, t, f))
    if name == "pooling":
        factor = int(rng.integers(1, 4))
        return MaxPoolFreq(factor), rng.standard_normal((4, b, c, t, f * factor))
    if name == "bigru":
        return BiGRU(d, q, rng), rng.standard_normal((b, t, d))
    return PlanesToSequence(), rng.standard_normal((4, b, c, t, f))


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", LAYER_CASES)
def test_layer_gradients_on_random_shapes(name, seed):
    rng = np.random.default_rng(100 + seed)
    layer, x = _random_layer_case(name, rng)
    weights = rng.standard_normal(layer.forward(x).shape)

    def loss(out):
        return float(np.sum(out * weights)), weights

    report = gradcheck(layer, x, loss, max_entries=8, seed=seed)
    assert report.checked > 0
    assert report.max_rel_err < 1e-6, (name, x.shape, report.worst_param, report.max_rel_err)
