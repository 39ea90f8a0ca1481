"""
Arquitectura QSELD y su baseline real.

    características [B, T, M/2, 8]
      -> QuatTensor [B, 2, T, M/2]
      -> (QConv2d(P) -> ReLU split -> BN split -> max-pool en frecuencia) × conv_layers
      -> [B, T, 2, 4P] -> [B, T, 8P]
      -> BiGRU(Q)
      -> rama SED: Dense(R, lineal) -> Dense(N, sigmoide)
      -> rama DOA: Dense(R, lineal) -> Dense(3N, tanh)

El baseline real sustituye las convoluciones cuaterniónicas por convoluciones reales
de ``2P`` filtros sobre los 8 planos de entrada.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.data_types import EnumType, FloatType, IntegerType, ListType
from BKLibQSeld.dataset import split_sequences
from BKLibQSeld.exceptions import ConfigurationError, ShapeError
from BKLibQSeld.features import FeatureClip, PlaneStats, check_window_length
from BKLibQSeld.layers.activation import SplitActivation
from BKLibQSeld.layers.batch_norm import SplitBatchNorm
from BKLibQSeld.layers.conv import Conv2d
from BKLibQSeld.layers.dense import Dense
from BKLibQSeld.layers.layer_base import LayerStack
from BKLibQSeld.layers.pooling import MaxPoolFreq
from BKLibQSeld.layers.qconv import QConv2d
from BKLibQSeld.layers.recurrent import BiGRU
from BKLibQSeld.layers.reshape import PlanesToSequence
from BKLibQSeld.quaternion import QuatTensor
from BKLibQSeld.record import Record

logger = logging.getLogger(__name__)

NETWORK_KINDS = ("quaternion", "real")


class QseldConfig(Record):
    """
    Hiperparámetros de la red.
    """
    fields = {
        "kind": EnumType("kind", doc="quaternion o real", default="quaternion", choices=NETWORK_KINDS),
        "filters": IntegerType("filters", doc="Filtros P por capa convolucional", default=2, min_value=1),
        "conv_layers": IntegerType("conv_layers", doc="Número de capas convolucionales", default=3, min_value=1),
        "pool_factors": ListType("pool_factors", doc="Factor de max-pooling en frecuencia por capa",
                                 default=[4, 2, 2], subtype=IntegerType, subtype_options={"min_value": 1}),
        "sequence_frames": IntegerType("sequence_frames", doc="Frames T por secuencia", default=8, min_value=1),
        "window_length": IntegerType("window_length", doc="Longitud de ventana M", default=64),
        "rnn_hidden": IntegerType("rnn_hidden", doc="Tamaño Q del estado oculto", default=16, min_value=1),
        "fc_width": IntegerType("fc_width", doc="Anchura R de las ramas densas", default=16, min_value=1),
        "n_classes": IntegerType("n_classes", doc="Número de clases N", default=3, min_value=1),
        "doa_weight": FloatType("doa_weight", doc="Peso λ de la pérdida DOA", default=5.0, min_value=0),
        "precision": EnumType("precision", doc="f32 o f64", default=Config.DEFAULT_PRECISION,
                              choices=tuple(Config.PRECISIONS)),
    }

    def check(self):
        check_window_length(self.window_length)
        if len(self.pool_factors) != self.conv_layers:
            raise ConfigurationError(f"pool_factors tiene {len(self.pool_factors)} factores para "
                                     f"{self.conv_layers} capas convolucionales")
        bins = self.window_length // 2
        if math.prod(self.pool_factors) * 2 != bins:
            raise ConfigurationError(f"El producto de pool_factors {self.pool_factors} debe ser (M/2)/2 = "
                                     f"{bins / 2:g} para terminar con 2 bins de frecuencia")

    @property
    def bins(self) -> int:
        return self.window_length // 2

    @property
    def dtype(self):
        return Config.dtype(self.precision)


def trunk_output_shape(config: QseldConfig) -> Tuple[int, int, int]:
    """
    Forma real de la salida convolucional por secuencia: ``(T, 2, 4P)`` (``(T, 2, 2P)`` en el baseline).
    """
    maps = 4 * config.filters if config.kind == "quaternion" else 2 * config.filters
    return config.sequence_frames, 2, maps


class SeldNetwork(LayerStack):
    """
    Red SELD completa con ``forward``/``backward`` explícitos.

    ``forward(features [B, T, F, 8]) -> (sed [B, T, N], doa [B, T, 3N])`` y
    ``backward((dL/dsed, dL/ddoa)) -> dL/dfeatures``.

    :param stats: Normalización por plano aplicada en :func:`predict` (no en ``forward``).
    """

    def __init__(self, config: QseldConfig, trunk: LayerStack, rnn: BiGRU, sed_branch: LayerStack,
                 doa_branch: LayerStack, seed: int, name: str = "qseld"):
        self.reshape = PlanesToSequence()
        super().__init__(name, [trunk, self.reshape, rnn, sed_branch, doa_branch])
        self.config = config
        self.seed = seed
        self.trunk = trunk
        self.rnn = rnn
        self.sed_branch = sed_branch
        self.doa_branch = doa_branch
        self.stats: Optional[PlaneStats] = None

    @property
    def kind(self) -> str:
        return self.config.kind

    def _pack(self, features: np.ndarray) -> np.ndarray:
        if features.ndim != 4 or features.shape[2] != self.config.bins or features.shape[3] != 8:
            raise ShapeError(f"{self.name}: características", f"[B, T, {self.config.bins}, 8]", features.shape)
        if self.kind == "quaternion":
            return QuatTensor.from_features(features).to_stacked()
        return np.ascontiguousarray(features.transpose(0, 3, 1, 2))[None]

    def _unpack_grad(self, grad: np.ndarray) -> np.ndarray:
        if self.kind == "quaternion":
            return QuatTensor(grad).to_features()
        return grad[0].transpose(0, 2, 3, 1)

    def forward(self, features):
        x = self._pack(np.asarray(features, dtype=self.config.dtype))
        seq = self.rnn.forward(self.reshape.forward(self.trunk.forward(x)))
        return self.sed_branch.forward(seq), self.doa_branch.forward(seq)

    def backward(self, grad_out):
        grad_sed, grad_doa = grad_out
        grad_seq = self.sed_branch.backward(grad_sed) + self.doa_branch.backward(grad_doa)
        grad = self.trunk.backward(self.reshape.backward(self.rnn.backward(grad_seq)))
        return self._unpack_grad(grad)


def _conv_block(config: QseldConfig, rng: np.random.Generator, quaternion: bool) -> LayerStack:
    dtype = config.dtype
    layers = []
    channels = 2 if quaternion else 8
    for i, factor in enumerate(config.pool_factors, start=1):
        if quaternion:
            layers.append(QConv2d(channels, config.filters, rng, dtype, name=f"conv{i}"))
            channels = config.filters
        else:
            layers.append(Conv2d(channels, 2 * config.filters, rng, dtype, name=f"conv{i}"))
            channels = 2 * config.filters
        layers.append(SplitActivation("relu", name=f"relu{i}"))
        layers.append(SplitBatchNorm(channels, 4 if quaternion else 1, dtype, name=f"bn{i}"))
        layers.append(MaxPoolFreq(factor, name=f"pool{i}"))
    return LayerStack("trunk", layers)


def _build(config: QseldConfig, seed: int, quaternion: bool) -> SeldNetwork:
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    trunk = _conv_block(config, rng, quaternion)
    _, bins, maps = trunk_output_shape(config)
    rnn = BiGRU(bins * maps, config.rnn_hidden, rng, dtype, name="rnn")
    width, n = config.fc_width, config.n_classes
    sed = LayerStack("sed", [Dense(2 * config.rnn_hidden, width, rng, "linear", dtype, name="sed_fc"),
                             Dense(width, n, rng, "sigmoid", dtype, name="sed_out")])
    doa = LayerStack("doa", [Dense(2 * config.rnn_hidden, width, rng, "linear", dtype, name="doa_fc"),
                             Dense(width, 3 * n, rng, "tanh", dtype, name="doa_out")])
    network = SeldNetwork(config, trunk, rnn, sed, doa, seed, name="qseld" if quaternion else "seldnet")
    logger.debug("Red %s construida: %d parámetros", network.name, network.count_parameters())
    return network


def build_qseld(config: QseldConfig, seed: int = 0) -> SeldNetwork:
    """
    Construye la red cuaterniónica. ``config.kind`` se fija a ``quaternion``.
    """
    return _build(config.replace(kind="quaternion"), seed, quaternion=True)


def build_real_baseline(config: QseldConfig, seed: int = 0) -> SeldNetwork:
    """
    Construye el baseline real equivalente (convoluciones reales de ``2P`` filtros).
    """
    return _build(config.replace(kind="real"), seed, quaternion=False)


def build_network(config: QseldConfig, seed: int = 0) -> SeldNetwork:
    if config.kind == "real":
        return build_real_baseline(config, seed)
    return build_qseld(config, seed)


def count_parameters(network) -> int:
    """
    Número de parámetros reales entrenables.
    """
    return network.count_parameters()


def predict(model: SeldNetwork, clip) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predicción de un clip completo en modo eval.

    El clip se normaliza con ``model.stats``, se parte en secuencias de ``T`` frames (la última
    rellena con ceros) y las salidas se recomponen y recortan a los frames del clip.

    :param clip: :class:`FeatureClip` o array ``[frames, M/2, 8]``.
    :return: ``(probabilidades [frames, N], doa [frames, N, 3])``.
    :raises ShapeError: Si el número de bins no coincide con la configuración.
    """
    features = clip.features if isinstance(clip, FeatureClip) else np.asarray(clip)
    config = model.config
    if features.ndim != 3 or features.shape[1:] != (config.bins, 8):
        raise ShapeError("predict: características", f"[frames, {config.bins}, 8]", features.shape)
    frames = features.shape[0]
    if model.stats is not None:
        features = model.stats.apply(features)
    sequences = split_sequences(features.astype(config.dtype, copy=False), config.sequence_frames)
    was_training = model.training
    model.eval()
    try:
        sed, doa = model.forward(sequences)
    finally:
        model.train(was_training)
    n = config.n_classes
    sed = sed.reshape(-1, n)[:frames]
    doa = doa.reshape(-1, n, 3)[:frames]
    return sed, doa
