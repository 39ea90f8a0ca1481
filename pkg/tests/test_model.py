import numpy as np
import numpy.testing as npt
import pytest

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError, ShapeError
from BKLibQSeld.features import FeatureClip, PlaneStats
from BKLibQSeld.model import (
    QseldConfig,
    build_network,
    build_qseld,
    build_real_baseline,
    count_parameters,
    predict,
    trunk_output_shape,
)


@pytest.fixture
def desk_config():
    return QseldConfig()


@pytest.fixture
def features(rng):
    return rng.standard_normal((2, 8, 32, 8))


class TestConfig:
    def test_full_scale_shapes(self):
        preset = Config.preset("full")
        config = QseldConfig(**{k: v for k, v in preset.items() if k in QseldConfig.fields})
        assert trunk_output_shape(config) == (512, 2, 256)

    def test_desk_shapes(self, desk_config):
        assert trunk_output_shape(desk_config) == (8, 2, 8)

    def test_pool_product_must_reach_two_bins(self):
        with pytest.raises(ConfigurationError):
            QseldConfig(pool_factors=[4, 2, 1])

    def test_pool_count_must_match_layers(self):
        with pytest.raises(ConfigurationError):
            QseldConfig(conv_layers=2, pool_factors=[8, 2, 1])

    def test_pool_factors_from_text(self):
        assert QseldConfig(pool_factors="4,2,2").pool_factors == [4, 2, 2]


class TestNetwork:
    def test_output_shapes(self, desk_config, features):
        sed, doa = build_qseld(desk_config, seed=0).forward(features)
        assert sed.shape == (2, 8, 3)
        assert doa.shape == (2, 8, 9)
        assert np.all((sed > 0) & (sed < 1))
        assert np.all(np.abs(doa) <= 1)

    def test_trunk_and_reshape(self, desk_config, features):
        network = build_qseld(desk_config, seed=0)
        trunk = network.trunk.forward(network._pack(features))
        assert trunk.shape == (4, 2, 2, 8, 2)
        assert network.reshape.forward(trunk).shape == (2, 8, 16)

    def test_head_sizes(self, features):
        network = build_qseld(QseldConfig(n_classes=4), seed=0)
        sed, doa = network.forward(features)
        assert sed.shape[-1] == 4
        assert doa.shape[-1] == 12

    def test_quaternion_conv_parameter_count(self, desk_config):
        network = build_qseld(desk_config, seed=0)
        first = network.trunk.layers[0]
        assert first.count_parameters() == 4 * (2 * 9 * 2) + 4 * 2
        assert count_parameters(network) == network.count_parameters() > 0

    def test_real_baseline(self, desk_config, features):
        network = build_real_baseline(desk_config, seed=0)
        assert network.kind == "real"
        sed, doa = network.forward(features)
        assert sed.shape == (2, 8, 3)
        assert doa.shape == (2, 8, 9)

    def test_build_network_dispatches_on_kind(self, desk_config):
        assert build_network(desk_config.replace(kind="real")).name == "seldnet"
        assert build_network(desk_config).name == "qseld"

    def test_same_seed_same_weights(self, desk_config):
        a = build_qseld(desk_config, seed=3).state()
        b = build_qseld(desk_config, seed=3).state()
        assert a.keys() == b.keys()
        for key in a:
            npt.assert_array_equal(a[key], b[key])

    def test_backward_returns_feature_gradient(self, desk_config, features):
        network = build_qseld(desk_config, seed=0)
        sed, doa = network.forward(features)
        grad = network.backward((np.ones_like(sed), np.ones_like(doa)))
        assert grad.shape == features.shape

    def test_rejects_wrong_bins(self, desk_config, rng):
        with pytest.raises(ShapeError):
            build_qseld(desk_config).forward(rng.standard_normal((2, 8, 16, 8)))

    def test_single_precision(self, features):
        network = build_qseld(QseldConfig(precision="f32"), seed=0)
        sed, _ = network.forward(features)
        assert sed.dtype == np.float32


class TestPredict:
    def test_bounds_and_trim(self, desk_config, rng):
        network = build_qseld(desk_config, seed=0)
        clip = rng.standard_normal((21, 32, 8))
        probs, doa = predict(network, clip)
        assert probs.shape == (21, 3)
        assert doa.shape == (21, 3, 3)
        assert np.all((probs > 0) & (probs < 1))
        assert np.all(np.abs(doa) <= 1)
        assert network.training

    def test_deterministic(self, desk_config, rng):
        network = build_qseld(desk_config, seed=0)
        network.stats = PlaneStats.fit([rng.standard_normal((30, 32, 8))])
        clip = FeatureClip(rng.standard_normal((16, 32, 8)), 8000, 64)
        first = predict(network, clip)
        second = predict(network, FeatureClip(clip.features.copy(), 8000, 64))
        npt.assert_array_equal(first[0], second[0])
        npt.assert_array_equal(first[1], second[1])

    def test_rejects_wrong_shape(self, desk_config, rng):
        with pytest.raises(ShapeError):
            predict(build_qseld(desk_config), rng.standard_normal((16, 16, 8)))


def _random_config(rng):
    while True:
        layers = int(rng.integers(1, 4))
        factors = [int(f) for f in rng.choice([1, 2, 4], size=layers)]
        if np.prod(factors) >= 4:
            break
    return QseldConfig(kind=str(rng.choice(["quaternion", "real"])), filters=int(rng.integers(1, 4)),
                       conv_layers=layers, pool_factors=factors, window_length=4 * int(np.prod(factors)),
                       sequence_frames=int(rng.integers(1, 6)), rnn_hidden=int(rng.integers(1, 5)),
                       fc_width=int(rng.integers(1, 5)), n_classes=int(rng.integers(1, 5)))


def test_shape_contract_on_random_configs():
    rng = np.random.default_rng(77)
    for _ in range(20):
        config = _random_config(rng)
        network = build_network(config, seed=int(rng.integers(1000)))
        batch, frames = int(rng.integers(1, 4)), config.sequence_frames
        features = rng.standard_normal((batch, frames, config.bins, 8))
        trunk = network.trunk.forward(network._pack(features))
        assert trunk.shape[-2:] == (frames, 2)
        sequence = network.reshape.forward(trunk)
        assert sequence.shape == (batch, frames, int(np.prod(trunk_output_shape(config)[1:])))
        sed, doa = network.forward(features)
        assert sed.shape == (batch, frames, config.n_classes)
        assert doa.shape == (batch, frames, 3 * config.n_classes)
        grad = network.backward((np.ones_like(sed), np.ones_like(doa)))
        assert grad.shape == features.shape
