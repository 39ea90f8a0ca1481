import csv
import math

import numpy as np
import numpy.testing as npt
import pytest

from BKLibQSeld.checkpoint import load_checkpoint
from BKLibQSeld.dataset import ClipFeatures, SeldLabels, SequenceSet, build_sequences, dataset_features, load_dataset
from BKLibQSeld.exceptions import ConfigurationError
from BKLibQSeld.features import PlaneStats
from BKLibQSeld.model import QseldConfig, build_qseld
from BKLibQSeld.optim import trainer as trainer_module
from BKLibQSeld.optim.trainer import (
    TRAIN_LOG_COLUMNS,
    TrainConfig,
    evaluate_network,
    mini_batches,
    segment_frame_count,
    train,
)
from BKLibQSeld.synth import SynthConfig, synth_dataset


def constant_sequences(rng, n=4, frames=8, n_classes=3):
    """Secuencias con la clase 0 siempre activa hacia +x y el resto inactivas."""
    features = rng.standard_normal((n, frames, 32, 8))
    activity = np.zeros((n, frames, n_classes))
    activity[..., 0] = 1.0
    doa = np.zeros((n, frames, n_classes, 3))
    doa[..., 0, 0] = 1.0
    return SequenceSet(features, activity, doa)


def random_clip(rng, frames=12, n_classes=3):
    activity = (rng.random((frames, n_classes)) < 0.4).astype(np.int64)
    doa = np.zeros((frames, n_classes, 3))
    doa[activity == 1] = [0.0, 1.0, 0.0]
    return ClipFeatures("clip", rng.standard_normal((frames, 32, 8)), SeldLabels(activity, doa))


class TestMiniBatches:
    def test_covers_every_index_once(self):
        batches = mini_batches(10, 4, np.random.default_rng(0))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_trailing_singleton_is_merged(self):
        batches = mini_batches(9, 4, np.random.default_rng(0))
        assert [len(b) for b in batches] == [4, 5]

    def test_same_seed_same_order(self):
        a = mini_batches(7, 3, np.random.default_rng(5))
        b = mini_batches(7, 3, np.random.default_rng(5))
        for x, y in zip(a, b):
            npt.assert_array_equal(x, y)


@pytest.mark.parametrize("seconds, sample_rate, window, expected", [
    (1.0, 8000, 64, 250),
    (1.0, 44100, 512, 172),
    (0.001, 8000, 64, 1),
])
def test_segment_frame_count(seconds, sample_rate, window, expected):
    assert segment_frame_count(seconds, sample_rate, window) == expected


class TestTrain:
    def test_requires_two_sequences(self, rng):
        network = build_qseld(QseldConfig(), seed=0)
        with pytest.raises(ConfigurationError):
            train(network, constant_sequences(rng, n=1), TrainConfig(epochs=1, batch_size=2))

    def test_zero_epochs_saves_initial_network(self, rng, tmp_path):
        network = build_qseld(QseldConfig(), seed=0)
        initial = {k: v.copy() for k, v in network.state().items()}
        result = train(network, constant_sequences(rng), TrainConfig(epochs=0, batch_size=2),
                       checkpoint_path=tmp_path / "ckpt.qseld", log_path=tmp_path / "train_log.csv")
        assert result.history == []
        assert result.best_epoch == 0
        assert not result.diverged
        with (tmp_path / "train_log.csv").open(newline="") as fh:
            assert list(csv.reader(fh)) == [list(TRAIN_LOG_COLUMNS)]
        loaded = load_checkpoint(tmp_path / "ckpt.qseld").network.state()
        for key, value in initial.items():
            npt.assert_array_equal(loaded[key], value)

    def test_learns_constant_targets(self, rng):
        network = build_qseld(QseldConfig(), seed=0)
        config = TrainConfig(epochs=200, batch_size=2, lr=1e-2, seed=0)
        result = train(network, constant_sequences(rng), config)
        losses = [entry.train_loss for entry in result.history]
        assert len(losses) == 200
        assert losses[-1] < 0.1 * losses[0]
        assert result.best_score == min(losses)
        assert not network.training

    def test_deterministic_history(self, rng):
        sequences = constant_sequences(rng)
        config = TrainConfig(epochs=3, batch_size=2, lr=1e-2, seed=4)
        first = train(build_qseld(QseldConfig(), seed=1), sequences, config)
        second = train(build_qseld(QseldConfig(), seed=1), sequences, config)
        assert [e.train_loss for e in first.history] == [e.train_loss for e in second.history]
        assert [e.doa_loss for e in first.history] == [e.doa_loss for e in second.history]

    def test_validation_selects_by_seld_score(self, rng, tmp_path):
        network = build_qseld(QseldConfig(), seed=0)
        clips = [random_clip(rng), random_clip(rng, frames=9)]
        result = train(network, constant_sequences(rng), TrainConfig(epochs=2, batch_size=2), valid_clips=clips,
                       log_path=tmp_path / "train_log.csv")
        assert all(entry.metrics is not None for entry in result.history)
        scores = [entry.metrics.S_SELD for entry in result.history]
        assert result.best_score == min(scores)
        assert result.best.metrics.S_SELD == result.best_score
        with (tmp_path / "train_log.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert all(len(row) == len(TRAIN_LOG_COLUMNS) == 12 for row in rows)

    def test_divergence_keeps_best_epoch(self, rng, monkeypatch):
        network = build_qseld(QseldConfig(), seed=0)
        calls = {"n": 0}
        original = trainer_module.seld_loss

        def failing_loss(outputs, labels, config):
            calls["n"] += 1
            loss = original(outputs, labels, config)
            # dos mini-batches por época: la segunda época diverge
            return loss._replace(total=math.nan) if calls["n"] > 2 else loss

        monkeypatch.setattr(trainer_module, "seld_loss", failing_loss)
        result = train(network, constant_sequences(rng), TrainConfig(epochs=5, batch_size=2))
        assert result.diverged
        assert len(result.history) == 1
        assert result.best_epoch == 1


def test_evaluate_network(rng):
    network = build_qseld(QseldConfig(), seed=0)
    loss, report = evaluate_network(network, [random_clip(rng)], threshold=0.5, segment_frames=4)
    assert math.isfinite(loss) and loss > 0
    assert 0.0 <= report.F <= 1.0
    assert 0.0 <= report.DOA_err <= 180.0


def test_overfits_two_synthetic_clips(tmp_path):
    synth = SynthConfig(n_clips=2, clip_seconds=1.0, n_classes=2, events_per_track=1, event_min_seconds=0.3,
                        event_max_seconds=0.4, window_length=64, test_fraction=0.0, n_splits=1, seed=3)
    synth_dataset(synth, tmp_path)
    clips = dataset_features(load_dataset(tmp_path), synth.window_length)
    assert len(clips) == 2
    network = build_qseld(QseldConfig(n_classes=2), seed=0)
    network.stats = PlaneStats.fit([c.features for c in clips])
    sequences = build_sequences(clips, network.config.sequence_frames, network.stats)
    result = train(network, sequences, TrainConfig(epochs=200, batch_size=16, lr=1e-2, seed=0))
    losses = [entry.train_loss for entry in result.history]
    assert len(losses) == 200
    assert losses[-1] <= 0.1 * losses[0]
