import numpy as np
import pytest

from BKLibQSeld.synth import SynthConfig, synth_dataset

TINY_SYNTH = {
    "n_clips": 4,
    "clip_seconds": 1.0,
    "sample_rate": 8000,
    "n_classes": 3,
    "overlap": 1,
    "events_per_track": 2,
    "event_min_seconds": 0.2,
    "event_max_seconds": 0.3,
    "window_length": 64,
    "test_fraction": 0.25,
    "n_splits": 2,
    "seed": 7,
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="ejecuta también los entrenamientos completos a escala de escritorio")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: entrenamiento completo del preset desk (solo con --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="necesita --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# 1 s a 8 kHz con M = 64: 1 + (8000 − 64) // 32
TINY_FRAMES = 249


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synth_config() -> SynthConfig:
    return SynthConfig(**TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_synth_config):
    """Dataset sintético de 4 clips compartido por los tests que solo lo leen."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    synth_dataset(tiny_synth_config, root)
    return root
