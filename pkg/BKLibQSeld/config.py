import numpy as np
from scipy.special import expit
from pydantic import StrictBool
from BKLibQSeld.data_types import (
    StringType,
    IntegerType,
    FloatType,
    BooleanType,
    EnumType,
    ListType,
)


class Config:
    """
    Configuration class for BKLibQSeld.
    This class holds the library-wide constants, numeric tolerances and presets.
    """

    # Precisión numérica
    PRECISIONS = {
        "f32": np.float32,
        "f64": np.float64,
    }
    DEFAULT_PRECISION = "f64"

    # Capas
    KERNEL_SIZE = 3
    BATCH_NORM_EPSILON = 1e-8
    BATCH_NORM_MOMENTUM = 0.1
    PROBABILITY_CLAMP = 1e-7

    # Verificación de gradientes
    GRADCHECK_STEP = 1e-5
    GRADCHECK_FLOOR = 1e-8
    GRADCHECK_TOLERANCE = 1e-6
    GRADCHECK_MODEL_TOLERANCE = 1e-5

    # Ambisonics y etiquetas
    AMBISONIC_NORMALIZATION = "SN3D"
    AZIMUTH_GRID_DEG = tuple(range(-180, 180, 10))
    ELEVATION_GRID_DEG = tuple(range(-60, 61, 10))
    LABEL_CSV_HEADER = ("frame", "class", "active", "x", "y", "z")
    FLOAT_FORMAT = "{:.17e}"
    DATASET_FORMAT_VERSION = 1

    # Checkpoints e informes
    CHECKPOINT_MAGIC = b"QSELDCKP"
    CHECKPOINT_FORMAT_VERSION = 1
    METRIC_COLUMNS = ("ER", "F", "DOA_err", "K", "S_SED", "S_DOA", "S_SELD")

    # CLI
    SEED_ENV_VAR = "QSELD_SEED"
    RUNS_DIR = "runs"
    LOG_FORMAT = "%(asctime)s | %(levelname)-7s | %(name)s | %(message)s"

    # Activaciones split: nombre -> (f(x), f'(x, y)) con y = f(x)
    ACTIVATION_FUNCTIONS = {
        "relu": (lambda x: np.maximum(x, 0), lambda x, y: (x > 0).astype(x.dtype)),
        "sigmoid": (lambda x: expit(x), lambda x, y: y * (1 - y)),
        "tanh": (lambda x: np.tanh(x), lambda x, y: 1 - y * y),
        "linear": (lambda x: x, lambda x, y: np.ones_like(x)),
    }

    PYDANTIC_TYPE_EQUIVALENTS = {
        StringType: str,
        IntegerType: int,
        FloatType: float,
        BooleanType: StrictBool,
        EnumType: str,
        ListType: list,
    }

    PRESETS = {
        "desk": {
            "n_clips": 20,
            "clip_seconds": 2.0,
            "sample_rate": 8000,
            "n_classes": 3,
            "overlap": 1,
            "filters": 2,
            "conv_layers": 3,
            "pool_factors": [4, 2, 2],
            "sequence_frames": 8,
            "window_length": 64,
            "rnn_hidden": 16,
            "fc_width": 16,
            "epochs": 300,
            "batch_size": 16,
            "lr": 1e-3,
            "doa_weight": 5.0,
        },
        "overlap2": {"overlap": 2},
        "overlap3": {"overlap": 3},
        "full": {
            "n_clips": 300,
            "clip_seconds": 30.0,
            "sample_rate": 44100,
            "n_classes": 11,
            "overlap": 1,
            "filters": 64,
            "conv_layers": 3,
            "pool_factors": [8, 8, 2],
            "sequence_frames": 512,
            "window_length": 512,
            "rnn_hidden": 128,
            "fc_width": 32,
            "epochs": 1000,
            "batch_size": 16,
        },
    }
    # presets que se aplican encima de "desk"
    PRESET_BASE = {"overlap2": "desk", "overlap3": "desk"}

    @classmethod
    def dtype(cls, precision: str):
        """
        Devuelve el dtype de numpy asociado a una precisión ("f32" / "f64").
        """
        try:
            return cls.PRECISIONS[precision]
        except KeyError:
            raise ValueError(f"precision debe estar en {list(cls.PRECISIONS)}") from None

    @classmethod
    def preset(cls, name: str) -> dict:
        """
        Resuelve un preset por nombre, aplicando su preset base si lo tiene.
        """
        if name not in cls.PRESETS:
            raise ValueError(f"Preset desconocido: {name}. Disponibles: {sorted(cls.PRESETS)}")
        base = cls.PRESET_BASE.get(name)
        resolved = dict(cls.preset(base)) if base else {}
        resolved.update(cls.PRESETS[name])
        return resolved
