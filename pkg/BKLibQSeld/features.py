"""
Front-end STFT: magnitud y fase de los cuatro canales B-format.

Por canal se enventana con Hamming simétrico de longitud ``M`` y salto ``M/2``, se
calcula la DFT y se conservan los bins ``1..M/2`` (sin el bin 0). Los 8 planos de
salida son ``(|W|, |X|, |Y|, |Z|, ∠W, ∠X, ∠Y, ∠Z)``.

Con esta convención, para un frame ``x`` enventanado con ``w``,
``Σ_{k=1..M/2} |X_k|² ≈ (M/2)·Σ (x·w)²`` (Parseval sobre medio espectro).
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import rfft
from scipy.signal import get_window

from BKLibQSeld.exceptions import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

N_CHANNELS = 4
N_PLANES = 8


@dataclass(frozen=True)
class FeatureClip:
    """
    Características de un clip: ``features [T, M/2, 8]`` con magnitudes >= 0 y fases en (−π, π].
    """
    features: np.ndarray
    sample_rate: Optional[int]
    window_length: int

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    @property
    def bins(self) -> int:
        return self.features.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return self.features[..., :N_CHANNELS]

    @property
    def phase(self) -> np.ndarray:
        return self.features[..., N_CHANNELS:]


def check_window_length(window_length: int):
    if window_length < 16 or window_length % 2:
        raise ConfigurationError(f"window_length debe ser par y >= 16, se recibió {window_length}")


def frame_count(n_samples: int, window_length: int) -> int:
    """
    Número de frames completos con salto ``M/2``: ``1 + (L − M) // (M/2)``, 0 si ``L < M``.
    """
    if n_samples < window_length:
        return 0
    return 1 + (n_samples - window_length) // (window_length // 2)


def hamming_window(window_length: int) -> np.ndarray:
    """
    Ventana de Hamming simétrica ``0.54 − 0.46·cos(2πn/(M−1))``.
    """
    return get_window("hamming", window_length, fftbins=False)


def _as_channels(audio) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 2 or audio.shape[1] != N_CHANNELS:
        raise ShapeError("audio B-format", f"[muestras, {N_CHANNELS}]", audio.shape)
    if audio.shape[0] == 0:
        raise ConfigurationError("El audio está vacío")
    return audio


def _spectrum(audio: np.ndarray, window_length: int) -> np.ndarray:
    hop = window_length // 2
    n_frames = frame_count(audio.shape[0], window_length)
    if n_frames == 0:
        raise ConfigurationError(f"El audio ({audio.shape[0]} muestras) es más corto que una ventana de "
                                 f"{window_length} muestras")
    # [frames, canales, M]
    frames = sliding_window_view(audio, window_length, axis=0)[::hop][:n_frames]
    spec = rfft(frames * hamming_window(window_length), axis=-1)[..., 1:window_length // 2 + 1]
    magnitude = np.abs(spec)
    phase = np.angle(spec)
    phase = np.where(magnitude == 0, 0.0, phase)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return np.concatenate([magnitude, phase], axis=1).transpose(0, 2, 1)


def clip_features(audio, window_length: int, sample_rate: Optional[int] = None) -> FeatureClip:
    """
    Características de todos los frames completos de ``audio [L, 4]``.

    :raises ConfigurationError: Si ``M`` no es válido o el audio está vacío o es más corto que una ventana.
    """
    check_window_length(window_length)
    features = _spectrum(_as_channels(audio), window_length)
    return FeatureClip(np.ascontiguousarray(features), sample_rate, window_length)


def stft_features(audio, window_length: int, frames: int, sample_rate: Optional[int] = None) -> FeatureClip:
    """
    Como :func:`clip_features`, pero recortando o rellenando con ceros hasta exactamente ``frames`` frames.
    """
    if frames < 1:
        raise ConfigurationError(f"frames debe ser >= 1, se recibió {frames}")
    clip = clip_features(audio, window_length, sample_rate)
    features = clip.features[:frames]
    if features.shape[0] < frames:
        pad = np.zeros((frames - features.shape[0], *features.shape[1:]), dtype=features.dtype)
        features = np.concatenate([features, pad])
    return FeatureClip(features, sample_rate, window_length)


@dataclass
class PlaneStats:
    """
    Media y desviación por plano (8 valores cada una), calculadas sobre el conjunto de entrenamiento.
    """
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: Iterable[np.ndarray]) -> "PlaneStats":
        """
        :param features: Arrays ``[..., 8]`` (uno por clip).
        """
        stacked = np.concatenate([np.asarray(f, dtype=np.float64).reshape(-1, N_PLANES) for f in features])
        if stacked.shape[0] == 0:
            raise ConfigurationError("No hay frames para calcular las estadísticas de normalización")
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        flat = std == 0
        if np.any(flat):
            logger.warning("Planos de características con varianza nula: %s; se normalizan solo por la media",
                           np.flatnonzero(flat).tolist())
            std = np.where(flat, 1.0, std)
        return cls(mean, std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.mean) / self.std).astype(features.dtype, copy=False)

    def to_dict(self) -> Dict[str, list]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, list]) -> "PlaneStats":
        return cls(np.asarray(data["mean"], dtype=np.float64), np.asarray(data["std"], dtype=np.float64))
