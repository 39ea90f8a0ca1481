"""
Inicialización de pesos cuaterniónicos en forma polar con el criterio de He.

Cada peso se escribe como ``w = φ·(cos θ + u·sin θ)`` con ``u`` un cuaternión
puro unitario, ``θ ~ U[−π, π]`` y ``φ ~ U[−σ, σ]``, ``σ = 1/sqrt(2·n_i)``.
El segundo momento resultante es ``E[|w|²] = E[φ²] = σ²/3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from BKLibQSeld.exceptions import ConfigurationError
from BKLibQSeld.quaternion import Quaternion


def sigma_he(n_i: int) -> float:
    """
    Desviación del criterio de He, ``1/sqrt(2·n_i)``.

    :param n_i: Número de neuronas de entrada de la capa (>= 1).
    :raises ConfigurationError: Si ``n_i <= 0``.
    """
    if n_i <= 0:
        raise ConfigurationError(f"n_i debe ser >= 1, se recibió {n_i}")
    return 1.0 / math.sqrt(2.0 * n_i)


@dataclass(frozen=True)
class InitSpec:
    """
    Parámetros de una inicialización: entradas de la capa y semilla.

    Para convoluciones ``n_i = canales de entrada × alto × ancho del kernel``.
    """
    n_i: int
    seed: int = 0

    def __post_init__(self):
        if self.n_i < 1:
            raise ConfigurationError(f"n_i debe ser >= 1, se recibió {self.n_i}")

    @property
    def sigma(self) -> float:
        return sigma_he(self.n_i)


class PolarDraw(NamedTuple):
    magnitude: np.ndarray
    phase: np.ndarray
    axis: np.ndarray  # [3, *shape], eje imaginario unitario


def polar_draw(shape, n_i: int, rng: np.random.Generator) -> PolarDraw:
    """
    Muestrea los ingredientes polares ``(φ, θ, u)`` de ``shape`` pesos.

    El eje ``u`` es uniforme sobre la esfera (normal 3-D normalizada).
    """
    sigma = sigma_he(n_i)
    shape = tuple(shape)
    axis = rng.standard_normal((3, *shape))
    norm = np.sqrt(np.sum(axis * axis, axis=0))
    # una normal 3-D exactamente nula tiene probabilidad cero; se sustituye por el eje i
    degenerate = norm == 0
    if np.any(degenerate):
        axis[0][degenerate] = 1.0
        norm = np.where(degenerate, 1.0, norm)
    axis = axis / norm
    phase = rng.uniform(-math.pi, math.pi, size=shape)
    magnitude = rng.uniform(-sigma, sigma, size=shape)
    return PolarDraw(magnitude, phase, axis)


def quaternion_weights(shape, n_i: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """
    Pesos cuaterniónicos ``[4, *shape]`` según la receta polar.

    :param shape: Forma del tensor de pesos (sin el eje de componentes).
    :param n_i: Entradas de la capa para el criterio de He.
    :param rng: Generador de numpy.
    :param dtype: Tipo real de los planos.
    """
    draw = polar_draw(shape, n_i, rng)
    s = draw.magnitude * np.sin(draw.phase)
    weights = np.stack([
        draw.magnitude * np.cos(draw.phase),
        s * draw.axis[0],
        s * draw.axis[1],
        s * draw.axis[2],
    ])
    return weights.astype(dtype, copy=False)


def init_quaternion_weight(spec: InitSpec) -> Quaternion:
    """
    Un único peso cuaterniónico determinista para ``spec``.
    """
    rng = np.random.default_rng(spec.seed)
    return Quaternion.from_array(quaternion_weights((), spec.n_i, rng))


def uniform_weights(shape, bound: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """
    Pesos reales ``U[−bound, bound]`` para las capas reales (ramas densas, GRU, baseline).
    """
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype, copy=False)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def he_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)
