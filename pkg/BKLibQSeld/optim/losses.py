"""
Pérdidas del entrenamiento conjunto SED + DOA.

Cada función devuelve el valor escalar y el gradiente respecto a la predicción,
listo para pasarlo al ``backward`` de la red.
"""
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError, ShapeError


def bce_loss(pred: np.ndarray, target: np.ndarray, clamp: float = Config.PROBABILITY_CLAMP) -> Tuple[float, np.ndarray]:
    """
    Entropía cruzada binaria media ``−[t·log p + (1 − t)·log(1 − p)]``.

    Las predicciones se recortan a ``[clamp, 1 − clamp]``; donde el recorte está
    activo el gradiente es 0.

    :return: ``(pérdida, dL/dpred)``.
    :raises ShapeError: Si las formas no coinciden.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError("bce_loss: forma de target", pred.shape, target.shape)
    p = np.clip(pred, clamp, 1.0 - clamp)
    n = pred.size
    loss = -np.sum(target * np.log(p) + (1 - target) * np.log1p(-p)) / n
    grad = (p - target) / (p * (1 - p)) / n
    grad = np.where((pred < clamp) | (pred > 1.0 - clamp), 0.0, grad).astype(pred.dtype, copy=False)
    return float(loss), grad


def masked_mse_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Error cuadrático medio de la DOA restringido a los pares (frame, clase) activos.

    :param pred: ``[..., T, 3N]`` con las coordenadas agrupadas por clase (x, y, z de la clase 0, luego la 1...).
    :param target: Misma forma que ``pred``.
    :param mask: Actividad ``[..., T, N]``; se repite sobre las tres coordenadas.
    :return: ``(Σ mask·(p − t)² / (3·n_activos), gradiente)``. Sin pares activos la pérdida y el gradiente son 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError("masked_mse_loss: forma de target", pred.shape, target.shape)
    if mask.shape[:-1] != pred.shape[:-1] or 3 * mask.shape[-1] != pred.shape[-1]:
        raise ShapeError("masked_mse_loss: forma de la máscara", (*pred.shape[:-1], pred.shape[-1] // 3), mask.shape)
    active = float(mask.sum())
    if active == 0:
        return 0.0, np.zeros_like(pred)
    mask3 = np.repeat(mask, 3, axis=-1)
    diff = (pred - target) * mask3
    denom = 3.0 * active
    return float(np.sum(diff * diff) / denom), 2.0 * diff / denom


@dataclass(frozen=True)
class LossConfig:
    """
    Peso ``λ`` de la pérdida DOA: ``L = L_SED + λ·L_DOA``.
    """
    doa_weight: float = 5.0

    def __post_init__(self):
        if not self.doa_weight >= 0:
            raise ConfigurationError(f"doa_weight debe ser >= 0, se recibió {self.doa_weight}")


class SeldLoss(NamedTuple):
    total: float
    sed: float
    doa: float
    grad_sed: np.ndarray
    grad_doa: np.ndarray


def seld_loss(outputs, labels, config: LossConfig = LossConfig()) -> SeldLoss:
    """
    Pérdida combinada de una salida de la red.

    :param outputs: ``(sed [..., T, N] en (0, 1), doa [..., T, 3N])``.
    :param labels: ``(activity [..., T, N], doa [..., T, N, 3])``.
    """
    sed_pred, doa_pred = outputs
    activity, doa_target = labels
    doa_target = np.asarray(doa_target)
    doa_target = doa_target.reshape(*doa_target.shape[:-2], -1)
    sed, grad_sed = bce_loss(sed_pred, activity)
    doa, grad_doa = masked_mse_loss(doa_pred, doa_target, activity)
    weight = config.doa_weight
    return SeldLoss(sed + weight * doa, sed, doa, grad_sed, weight * grad_doa)
