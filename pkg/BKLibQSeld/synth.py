"""
Generador de datasets B-format sintéticos con etiquetas SED y DOA por frame.

Cada clip reparte sus eventos en ``overlap`` pistas paralelas. El clip se divide
en ``events_per_track`` ranuras iguales y cada pista coloca como mucho un evento
por ranura, separado de los bordes por media ventana, de modo que dos eventos
de ranuras distintas nunca comparten un frame. Los eventos de una misma ranura
reciben clases distintas.

Un frame está activo para una clase si su ventana ``[f·M/2, f·M/2 + M)`` solapa
algún evento de esa clase; fuera de esos frames el audio es exactamente cero.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import butter, chirp, sosfilt

from BKLibQSeld.config import Config
from BKLibQSeld.data_types import FloatType, IntegerType
from BKLibQSeld.dataset import (
    ClassTimbre,
    ClipEntry,
    DatasetManifest,
    EventEntry,
    SeldLabels,
    write_labels,
    write_manifest,
)
from BKLibQSeld.exceptions import ConfigurationError, PackingError
from BKLibQSeld.features import check_window_length, frame_count
from BKLibQSeld.record import Record

logger = logging.getLogger(__name__)

TIMBRE_FAMILIES = ("tone_complex", "chirp", "filtered_noise")
FADE_SECONDS = 0.005


class SynthConfig(Record):
    """
    Parámetros de generación de un dataset sintético.
    """
    fields = {
        "n_clips": IntegerType("n_clips", doc="Número de clips", default=20, min_value=1),
        "clip_seconds": FloatType("clip_seconds", doc="Duración de cada clip (s)", default=2.0, exclusive_min=0),
        "sample_rate": IntegerType("sample_rate", doc="Frecuencia de muestreo (Hz)", default=8000, min_value=1000),
        "n_classes": IntegerType("n_classes", doc="Número de clases N", default=3, min_value=1),
        "overlap": IntegerType("overlap", doc="Máximo de eventos simultáneos O", default=1, min_value=1, max_value=3),
        "events_per_track": IntegerType("events_per_track", doc="Ranuras de eventos por pista", default=2,
                                        min_value=1),
        "event_min_seconds": FloatType("event_min_seconds", doc="Duración mínima de un evento (s)", default=0.3,
                                       exclusive_min=0),
        "event_max_seconds": FloatType("event_max_seconds", doc="Duración máxima de un evento (s)", default=0.8,
                                       exclusive_min=0),
        "window_length": IntegerType("window_length", doc="Longitud de ventana M de las etiquetas", default=64),
        "test_fraction": FloatType("test_fraction", doc="Fracción de clips de test", default=0.25,
                                   min_value=0, max_value=0.9),
        "n_splits": IntegerType("n_splits", doc="Particiones de validación cruzada", default=3, min_value=1),
        "seed": IntegerType("seed", doc="Semilla", default=0, min_value=0),
    }

    def check(self):
        check_window_length(self.window_length)
        if self.event_min_seconds > self.event_max_seconds:
            raise ConfigurationError("event_min_seconds no puede ser mayor que event_max_seconds")
        if self.overlap > self.n_classes:
            raise ConfigurationError(f"overlap={self.overlap} exige al menos {self.overlap} clases, "
                                     f"hay {self.n_classes}")
        if self.n_splits > self.n_clips:
            raise ConfigurationError(f"n_splits={self.n_splits} no puede superar n_clips={self.n_clips}")
        if frame_count(self.n_samples, self.window_length) < 1:
            raise ConfigurationError("El clip es más corto que una ventana de análisis")

    @property
    def n_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))


def _on_grid(degrees: float, grid) -> bool:
    return any(math.isclose(degrees, g, abs_tol=1e-9) for g in grid)


@dataclass(frozen=True)
class EventSpec:
    """
    Evento sonoro: clase, intervalo en segundos, dirección en radianes y ganancia lineal.
    """
    class_id: int
    onset: float
    offset: float
    azimuth: float
    elevation: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.offset > self.onset:
            raise ConfigurationError(f"El evento termina ({self.offset}) antes de empezar ({self.onset})")
        if not _on_grid(math.degrees(self.azimuth), Config.AZIMUTH_GRID_DEG):
            raise ConfigurationError(f"Acimut fuera de la rejilla de direcciones: {math.degrees(self.azimuth):g}°")
        if not _on_grid(math.degrees(self.elevation), Config.ELEVATION_GRID_DEG):
            raise ConfigurationError(f"Elevación fuera de la rejilla [{Config.ELEVATION_GRID_DEG[0]}°, "
                                     f"{Config.ELEVATION_GRID_DEG[-1]}°]: {math.degrees(self.elevation):g}°")

    def sample_range(self, sample_rate: int) -> Tuple[int, int]:
        return int(round(self.onset * sample_rate)), int(round(self.offset * sample_rate))

    def unit_vector(self) -> np.ndarray:
        return direction_vector(self.azimuth, self.elevation)

    def to_entry(self) -> EventEntry:
        return EventEntry(class_id=self.class_id, onset=self.onset, offset=self.offset,
                          azimuth_deg=math.degrees(self.azimuth), elevation_deg=math.degrees(self.elevation),
                          amplitude=self.amplitude)


def direction_vector(azimuth, elevation) -> np.ndarray:
    """
    Vector unitario cartesiano ``(cos θ·cos φ, sin θ·cos φ, sin φ)`` (acepta arrays).
    """
    azimuth = np.asarray(azimuth, dtype=np.float64)
    elevation = np.asarray(elevation, dtype=np.float64)
    return np.stack([np.cos(azimuth) * np.cos(elevation),
                     np.sin(azimuth) * np.cos(elevation),
                     np.sin(elevation)], axis=-1)


def bformat_gains(azimuth: float, elevation: float) -> np.ndarray:
    """
    Ganancias de primer orden ``(W, X, Y, Z) = (1, cos θ·cos φ, sin θ·cos φ, sin φ)``, W con ganancia unidad.
    """
    return np.concatenate([[1.0], direction_vector(azimuth, elevation)])


def encode_bformat(signal, azimuth: float, elevation: float) -> np.ndarray:
    """
    Codifica una señal mono en B-format.

    :return: Array ``[muestras, 4]`` con los canales W, X, Y, Z.
    """
    signal = np.asarray(signal, dtype=np.float64)
    return signal[:, None] * bformat_gains(azimuth, elevation)[None, :]


def grid_directions() -> Tuple[np.ndarray, np.ndarray]:
    """
    Rejilla de direcciones en grados: ``(acimuts, elevaciones)`` aplanados, una entrada por punto.
    """
    az, el = np.meshgrid(np.asarray(Config.AZIMUTH_GRID_DEG, dtype=np.float64),
                         np.asarray(Config.ELEVATION_GRID_DEG, dtype=np.float64), indexing="ij")
    return az.reshape(-1), el.reshape(-1)


def decode_grid_direction(bformat) -> Tuple[float, float]:
    """
    Dirección de la rejilla más próxima al vector de pseudo-intensidad ``(ΣW·X, ΣW·Y, ΣW·Z) / ΣW²``.

    :param bformat: Audio ``[muestras, 4]`` con una única fuente activa.
    :return: ``(acimut, elevación)`` en grados.
    :raises ConfigurationError: Si el canal W no tiene energía.
    """
    bformat = np.asarray(bformat, dtype=np.float64)
    w = bformat[:, 0]
    energy = float(np.dot(w, w))
    if energy == 0:
        raise ConfigurationError("No se puede estimar la dirección de un clip silencioso")
    intensity = bformat[:, 1:].T @ w / energy
    az, el = grid_directions()
    scores = direction_vector(np.radians(az), np.radians(el)) @ intensity
    best = int(np.argmax(scores))
    return float(az[best]), float(el[best])


def class_timbre(class_id: int, sample_rate: int) -> ClassTimbre:
    """
    Timbre paramétrico determinista de una clase. La familia va por ``class_id % 3``
    y las frecuencias escalan con la frecuencia de muestreo.
    """
    family = TIMBRE_FAMILIES[class_id % len(TIMBRE_FAMILIES)]
    k = class_id // len(TIMBRE_FAMILIES)
    fs = float(sample_rate)
    if family == "tone_complex":
        params = {"f0": fs * (0.025 + 0.011 * k), "harmonics": 4.0}
    elif family == "chirp":
        params = {"f_start": fs * (0.05 + 0.013 * k), "f_end": fs * (0.2 + 0.017 * k)}
    else:
        params = {"f_low": fs * (0.12 + 0.019 * k), "f_high": fs * (0.22 + 0.019 * k)}
    return ClassTimbre(class_id=class_id, family=family, params=params)


def render_timbre(timbre: ClassTimbre, n_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """
    Señal mono de ``n_samples`` muestras con pico 1 y rampas de entrada y salida.
    """
    t = np.arange(n_samples) / sample_rate
    p = timbre.params
    nyquist = sample_rate / 2
    if timbre.family == "tone_complex":
        signal = np.zeros(n_samples)
        for h in range(1, int(p["harmonics"]) + 1):
            if h * p["f0"] < nyquist:
                signal += np.sin(2 * np.pi * h * p["f0"] * t + rng.uniform(-np.pi, np.pi)) / h
    elif timbre.family == "chirp":
        duration = max(t[-1], 1.0 / sample_rate)
        signal = chirp(t, f0=p["f_start"], t1=duration, f1=p["f_end"], method="linear")
    else:
        sos = butter(4, [p["f_low"], min(p["f_high"], 0.95 * nyquist)], btype="bandpass",
                     fs=sample_rate, output="sos")
        signal = sosfilt(sos, rng.standard_normal(n_samples))
    fade = min(int(FADE_SECONDS * sample_rate), n_samples // 2)
    if fade > 0:
        ramp = np.sin(np.linspace(0, np.pi / 2, fade + 2)[1:-1]) ** 2
        signal[:fade] *= ramp
        signal[-fade:] *= ramp[::-1]
    peak = np.max(np.abs(signal))
    return signal / peak if peak > 0 else signal


def place_events(config: SynthConfig, rng: np.random.Generator) -> List[EventSpec]:
    """
    Coloca los eventos de un clip: ``overlap`` pistas con ``events_per_track`` ranuras cada una.

    :raises PackingError: Si una ranura (menos el margen de una ventana) no admite un evento de la duración mínima.
    """
    slot = config.clip_seconds / config.events_per_track
    margin = config.window_length / (2.0 * config.sample_rate)
    usable = slot - 2 * margin
    if usable < config.event_min_seconds:
        raise PackingError(f"No caben {config.events_per_track} eventos de al menos {config.event_min_seconds} s "
                           f"por pista en {config.clip_seconds} s (hueco útil {usable:.3f} s por ranura)")
    az_grid = np.radians(np.asarray(Config.AZIMUTH_GRID_DEG, dtype=np.float64))
    el_grid = np.radians(np.asarray(Config.ELEVATION_GRID_DEG, dtype=np.float64))
    events = []
    for s in range(config.events_per_track):
        classes = rng.permutation(config.n_classes)[:config.overlap]
        for track in range(config.overlap):
            duration = rng.uniform(config.event_min_seconds, min(config.event_max_seconds, usable))
            onset = s * slot + margin + rng.uniform(0.0, usable - duration)
            events.append(EventSpec(
                class_id=int(classes[track]),
                onset=float(onset),
                offset=float(onset + duration),
                azimuth=float(rng.choice(az_grid)),
                elevation=float(rng.choice(el_grid)),
                amplitude=float(rng.uniform(0.4, 0.9)),
            ))
    return sorted(events, key=lambda e: (e.onset, e.class_id))


def render_clip(events: List[EventSpec], config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Mezcla B-format ``[muestras, 4]`` de los eventos dados.
    """
    audio = np.zeros((config.n_samples, 4))
    for event in events:
        start, stop = event.sample_range(config.sample_rate)
        stop = min(stop, config.n_samples)
        if stop <= start:
            continue
        mono = event.amplitude * render_timbre(class_timbre(event.class_id, config.sample_rate),
                                               stop - start, config.sample_rate, rng)
        audio[start:stop] += encode_bformat(mono, event.azimuth, event.elevation)
    return audio


def event_labels(events: List[EventSpec], n_samples: int, sample_rate: int, window_length: int,
                 n_classes: int) -> SeldLabels:
    """
    Etiquetas por frame: activo si la ventana del frame solapa el evento; DOA unitaria donde está activo.
    """
    n_frames = frame_count(n_samples, window_length)
    hop = window_length // 2
    starts = np.arange(n_frames) * hop
    activity = np.zeros((n_frames, n_classes), dtype=np.int64)
    doa = np.zeros((n_frames, n_classes, 3))
    for event in events:
        start, stop = event.sample_range(sample_rate)
        hit = (starts < stop) & (starts + window_length > start)
        activity[hit, event.class_id] = 1
        doa[hit, event.class_id] = event.unit_vector()
    return SeldLabels(activity, doa)


@dataclass
class SynthClip:
    clip_id: str
    audio: np.ndarray
    labels: SeldLabels
    events: List[EventSpec]


def synth_clip(clip_id: str, config: SynthConfig, seed_seq: np.random.SeedSequence) -> SynthClip:
    rng = np.random.default_rng(seed_seq)
    events = place_events(config, rng)
    audio = render_clip(events, config, rng)
    labels = event_labels(events, config.n_samples, config.sample_rate, config.window_length, config.n_classes)
    return SynthClip(clip_id, audio, labels, events)


def clip_partition(n_clips: int, test_fraction: float, n_splits: int) -> Tuple[List[str], List[int]]:
    """
    Partición fija (los últimos ``ceil(n·test_fraction)`` clips son test) y pliegues contiguos ``1..n_splits``.
    """
    n_test = int(math.ceil(n_clips * test_fraction)) if test_fraction > 0 else 0
    n_test = min(n_test, n_clips - 1)
    splits = ["train"] * (n_clips - n_test) + ["test"] * n_test
    folds = [0] * n_clips
    for k, part in enumerate(np.array_split(np.arange(n_clips), n_splits), start=1):
        for i in part:
            folds[int(i)] = k
    return splits, folds


def build_manifest(config: SynthConfig, clips: List[SynthClip]) -> DatasetManifest:
    splits, folds = clip_partition(config.n_clips, config.test_fraction, config.n_splits)
    return DatasetManifest(
        format_version=Config.DATASET_FORMAT_VERSION,
        sample_rate=config.sample_rate,
        window_length=config.window_length,
        hop=config.window_length // 2,
        clip_seconds=config.clip_seconds,
        n_samples=config.n_samples,
        frames_per_clip=frame_count(config.n_samples, config.window_length),
        n_classes=config.n_classes,
        overlap=config.overlap,
        seed=config.seed,
        normalization=Config.AMBISONIC_NORMALIZATION,
        azimuth_grid_deg=list(Config.AZIMUTH_GRID_DEG),
        elevation_grid_deg=list(Config.ELEVATION_GRID_DEG),
        classes=[class_timbre(c, config.sample_rate) for c in range(config.n_classes)],
        n_splits=config.n_splits,
        test_fraction=config.test_fraction,
        clips=[ClipEntry(id=clip.clip_id, split=split, fold=fold, events=[e.to_entry() for e in clip.events])
               for clip, split, fold in zip(clips, splits, folds)],
    )


def synth_dataset(config: SynthConfig, out_dir, threads: int = 1) -> Path:
    """
    Genera el dataset completo en ``out_dir``: ``clips/<id>.wav``, ``labels/<id>.csv`` y ``meta.json``.

    Cada clip usa su propia semilla derivada de ``config.seed``, así que el resultado no
    depende de ``threads``.

    :return: Ruta de ``meta.json``.
    :raises PackingError: Si los eventos pedidos no caben en el clip.
    """
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_clips)
    ids = [f"clip_{i:04d}" for i in range(config.n_clips)]
    # se valida el empaquetado antes de lanzar trabajo
    place_events(config, np.random.default_rng(0))

    logger.info("Generando %d clips (O=%d, N=%d, %.2f s a %d Hz) en %s", config.n_clips, config.overlap,
                config.n_classes, config.clip_seconds, config.sample_rate, out_dir)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            clips = list(pool.map(lambda args: synth_clip(args[0], config, args[1]), zip(ids, seeds)))
    else:
        clips = [synth_clip(clip_id, config, seed) for clip_id, seed in zip(ids, seeds)]

    for clip in clips:
        sf.write(str(out_dir / "clips" / f"{clip.clip_id}.wav"), clip.audio, config.sample_rate, subtype="FLOAT")
        write_labels(out_dir / "labels" / f"{clip.clip_id}.csv", clip.labels)
    manifest_path = out_dir / "meta.json"
    write_manifest(manifest_path, build_manifest(config, clips))
    logger.info("Dataset escrito: %s", manifest_path)
    return manifest_path


def class_summary(labels: List[SeldLabels]) -> Dict[str, int]:
    """
    Máximo de clases activas a la vez y número de frames activos, para los logs de ``synth``.
    """
    max_active = max((int(l.activity.sum(axis=1).max(initial=0)) for l in labels), default=0)
    active_frames = sum(int((l.activity.sum(axis=1) > 0).sum()) for l in labels)
    return {"max_active": max_active, "active_frames": active_frames}

