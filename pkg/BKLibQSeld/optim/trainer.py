"""
Bucle de entrenamiento conjunto SED + DOA con Adam y selección del mejor checkpoint.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from BKLibQSeld.checkpoint import save_checkpoint
from BKLibQSeld.config import Config
from BKLibQSeld.data_types import FloatType, IntegerType
from BKLibQSeld.dataset import ClipFeatures, SequenceSet
from BKLibQSeld.exceptions import ConfigurationError, OptimizationError
from BKLibQSeld.metrics import MetricReport, SeldMetricAccumulator
from BKLibQSeld.model import predict
from BKLibQSeld.optim.adam import Adam, AdamState
from BKLibQSeld.optim.losses import LossConfig, seld_loss
from BKLibQSeld.record import Record

logger = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("epoch", "train_loss", "sed_loss", "doa_loss", "valid_loss") + Config.METRIC_COLUMNS


class TrainConfig(Record):
    """
    Hiperparámetros del entrenamiento y de la evaluación de validación.
    """
    fields = {
        "epochs": IntegerType("epochs", doc="Número de épocas", default=300, min_value=0),
        "batch_size": IntegerType("batch_size", doc="Secuencias por mini-batch (batch norm necesita >= 2)",
                                  default=16, min_value=2),
        "lr": FloatType("lr", doc="Tasa de aprendizaje de Adam", default=1e-3, exclusive_min=0),
        "beta1": FloatType("beta1", doc="β1 de Adam", default=0.9, min_value=0, max_value=1),
        "beta2": FloatType("beta2", doc="β2 de Adam", default=0.999, min_value=0, max_value=1),
        "adam_epsilon": FloatType("adam_epsilon", doc="ε de Adam", default=1e-8, exclusive_min=0),
        "doa_weight": FloatType("doa_weight", doc="Peso λ de la pérdida DOA", default=5.0, min_value=0),
        "threshold": FloatType("threshold", doc="Umbral de actividad SED", default=0.5, min_value=0, max_value=1),
        "segment_seconds": FloatType("segment_seconds", doc="Duración de los segmentos de ER/F",
                                     default=1.0, exclusive_min=0),
        "seed": IntegerType("seed", doc="Semilla del barajado", default=0, min_value=0),
    }

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.doa_weight)


def segment_frame_count(segment_seconds: float, sample_rate: int, window_length: int) -> int:
    """
    Frames (salto ``M/2``) que forman un segmento de ``segment_seconds`` segundos; al menos 1.
    """
    return max(1, round(segment_seconds * sample_rate / (window_length // 2)))


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    sed_loss: float
    doa_loss: float
    valid_loss: float = math.nan
    metrics: Optional[MetricReport] = None

    def csv_row(self) -> list:
        values = [self.train_loss, self.sed_loss, self.doa_loss, self.valid_loss]
        values += self.metrics.csv_row() if self.metrics is not None else [math.nan] * len(Config.METRIC_COLUMNS)
        return [self.epoch] + [Config.FLOAT_FORMAT.format(v) for v in values]


@dataclass
class TrainResult:
    """
    Resultado de :func:`train`. La red queda con los pesos de ``best_epoch``.
    """
    history: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = math.inf
    diverged: bool = False
    optimizer: Optional[AdamState] = None

    @property
    def best(self) -> Optional[EpochLog]:
        return next((e for e in self.history if e.epoch == self.best_epoch), None)


def mini_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Índices barajados en lotes de ``batch_size``. Un último lote de una sola secuencia se une al anterior.
    """
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        logger.warning("Último mini-batch con una sola secuencia: se une al anterior")
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def evaluate_network(network, clips: List[ClipFeatures], threshold: float, segment_frames: int,
                     loss_config: LossConfig = LossConfig()) -> Tuple[float, MetricReport]:
    """
    Pérdida media (ponderada por frames) y métricas SELD de la red sobre clips completos.
    """
    accumulator = SeldMetricAccumulator(segment_frames, threshold)
    total, frames = 0.0, 0
    for clip in clips:
        probs, doa = predict(network, clip.features)
        n = clip.labels.frames
        loss = seld_loss((probs, doa.reshape(n, -1)), (clip.labels.activity, clip.labels.doa), loss_config)
        total += loss.total * n
        frames += n
        accumulator.update_probabilities(probs, clip.labels.activity, doa, clip.labels.doa)
    return total / max(frames, 1), accumulator.compute()


def _run_epoch(network, sequences: SequenceSet, optimizer: Adam, loss_config: LossConfig,
               batch_size: int, rng: np.random.Generator) -> Tuple[float, float, float]:
    network.train()
    totals = np.zeros(3)
    for indices in mini_batches(len(sequences), batch_size, rng):
        features, activity, doa = sequences.batch(indices)
        network.zero_grad()
        outputs = network.forward(features)
        loss = seld_loss(outputs, (activity, doa), loss_config)
        if not math.isfinite(loss.total):
            raise OptimizationError(f"Pérdida no finita ({loss.total}) en el mini-batch")
        network.backward((loss.grad_sed, loss.grad_doa))
        optimizer.step(network.parameters(), network.gradients())
        totals += len(indices) * np.array([loss.total, loss.sed, loss.doa])
    return tuple(float(v) for v in totals / len(sequences))


def _snapshot(network) -> dict:
    return {k: v.copy() for k, v in network.state().items()}


def write_train_log(path, history: List[EpochLog]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for entry in history:
            writer.writerow(entry.csv_row())
    return path


def train(network, sequences: SequenceSet, config: TrainConfig, valid_clips: Optional[List[ClipFeatures]] = None,
          segment_frames: int = 1, checkpoint_path=None, log_path=None, progress: bool = False) -> TrainResult:
    """
    Entrena ``network`` con Adam sobre ``sequences``.

    Tras cada época se evalúa sobre ``valid_clips`` (si hay) y se conserva la mejor época por
    S_SELD de validación; sin validación, por pérdida de entrenamiento. Si la pérdida o un
    gradiente dejan de ser finitos, el entrenamiento se detiene y se conserva el último mejor
    checkpoint. Con ``epochs = 0`` se guarda la red inicial y el log queda sin filas.

    :param sequences: Secuencias de entrenamiento ya normalizadas con ``network.stats``.
    :param valid_clips: Clips completos sin normalizar (``predict`` aplica ``network.stats``).
    :param checkpoint_path: Donde guardar el mejor checkpoint.
    :param log_path: Donde escribir ``train_log.csv``.
    :raises ConfigurationError: Si hay menos de dos secuencias de entrenamiento.
    """
    if len(sequences) < 2:
        raise ConfigurationError(f"Se necesitan al menos 2 secuencias de entrenamiento, hay {len(sequences)}")
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.adam_epsilon)
    loss_config = config.loss_config
    result = TrainResult(optimizer=optimizer.state)
    best_state = _snapshot(network)
    logger.info("Entrenando %s: %d parámetros, %d secuencias, %d épocas", network.name,
                network.count_parameters(), len(sequences), config.epochs)
    if checkpoint_path is not None:
        save_checkpoint(network, checkpoint_path, optimizer.state, metadata={"epoch": 0})

    for epoch in tqdm(range(1, config.epochs + 1), desc=network.name, unit="época", disable=not progress):
        try:
            train_loss, sed_loss, doa_loss = _run_epoch(network, sequences, optimizer, loss_config,
                                                        config.batch_size, rng)
        except OptimizationError as e:
            logger.error("Época %d: entrenamiento divergente, se conserva la época %d: %s",
                         epoch, result.best_epoch, e)
            result.diverged = True
            break
        entry = EpochLog(epoch, train_loss, sed_loss, doa_loss)
        score = train_loss
        if valid_clips:
            entry.valid_loss, entry.metrics = evaluate_network(network, valid_clips, config.threshold,
                                                               segment_frames, loss_config)
            score = entry.metrics.S_SELD
        result.history.append(entry)
        logger.info("Época %d: loss=%.5f (sed=%.5f, doa=%.5f) valid_loss=%.5f S_SELD=%s", epoch, train_loss,
                    sed_loss, doa_loss, entry.valid_loss,
                    "-" if entry.metrics is None else f"{entry.metrics.S_SELD:.4f}")
        if score < result.best_score:
            result.best_epoch, result.best_score = epoch, score
            best_state = _snapshot(network)
            if checkpoint_path is not None:
                save_checkpoint(network, checkpoint_path, optimizer.state, metadata={"epoch": epoch})

    network.load_state(best_state)
    network.eval()
    if log_path is not None:
        write_train_log(log_path, result.history)
    logger.info("Mejor época: %d (puntuación %.5f)%s", result.best_epoch, result.best_score,
                ", entrenamiento divergente" if result.diverged else "")
    return result
