"""
Formato en disco de los datasets y su carga.

    <raíz>/meta.json          manifiesto (DatasetManifest)
    <raíz>/clips/<id>.wav     audio B-format de 4 canales
    <raíz>/labels/<id>.csv    frame,class,active,x,y,z (una fila por frame y clase)
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional

import numpy as np
import soundfile as sf
from pydantic import BaseModel, ConfigDict, ValidationError

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError, DatasetError
from BKLibQSeld.features import PlaneStats, clip_features, frame_count

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-6


class EventEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    class_id: int
    onset: float
    offset: float
    azimuth_deg: float
    elevation_deg: float
    amplitude: float


class ClassTimbre(BaseModel):
    model_config = ConfigDict(extra="forbid")

    class_id: int
    family: str
    params: Dict[str, float]


class ClipEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    split: Literal["train", "test"]
    fold: int
    events: List[EventEntry]


class DatasetManifest(BaseModel):
    """
    Manifiesto ``meta.json`` de un dataset.
    """
    model_config = ConfigDict(extra="forbid")

    format_version: int
    sample_rate: int
    window_length: int
    hop: int
    clip_seconds: float
    n_samples: int
    frames_per_clip: int
    n_classes: int
    overlap: int
    seed: int
    normalization: str
    azimuth_grid_deg: List[float]
    elevation_grid_deg: List[float]
    classes: List[ClassTimbre]
    n_splits: int
    test_fraction: float
    clips: List[ClipEntry]


def write_manifest(path, manifest: DatasetManifest):
    Path(path).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    """
    :raises DatasetError: Si el fichero no existe, no es JSON válido o no cumple el esquema o la versión.
    """
    path = Path(path)
    try:
        manifest = DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(path, "no existe el manifiesto del dataset") from None
    except ValidationError as e:
        raise DatasetError(path, f"manifiesto inválido: {e}") from None
    if manifest.format_version != Config.DATASET_FORMAT_VERSION:
        raise DatasetError(path, f"versión de formato {manifest.format_version}, "
                                 f"se esperaba {Config.DATASET_FORMAT_VERSION}")
    return manifest


@dataclass
class SeldLabels:
    """
    Etiquetas de un clip: actividad ``[T, N]`` (0/1) y DOA ``[T, N, 3]``, unitaria donde hay actividad y nula donde no.
    """
    activity: np.ndarray
    doa: np.ndarray

    @property
    def frames(self) -> int:
        return self.activity.shape[0]

    @property
    def n_classes(self) -> int:
        return self.activity.shape[1]

    def doa_flat(self) -> np.ndarray:
        """DOA con las coordenadas agrupadas por clase: ``[T, 3N]``."""
        return self.doa.reshape(self.frames, -1)

    def __eq__(self, other):
        return (isinstance(other, SeldLabels) and np.array_equal(self.activity, other.activity)
                and np.array_equal(self.doa, other.doa))


def write_labels(path, labels: SeldLabels):
    fmt = Config.FLOAT_FORMAT.format
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(Config.LABEL_CSV_HEADER)
        for f in range(labels.frames):
            for c in range(labels.n_classes):
                x, y, z = labels.doa[f, c]
                writer.writerow([f, c, int(labels.activity[f, c]), fmt(x), fmt(y), fmt(z)])


def read_labels(path, n_classes: Optional[int] = None) -> SeldLabels:
    """
    Lee y valida un CSV de etiquetas.

    :param n_classes: Número de clases esperado; si no se da, se deduce de las filas.
    :raises DatasetError: Con fichero y línea si el CSV está mal formado o viola los invariantes.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DatasetError(path, "no existe el fichero de etiquetas") from None
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != Config.LABEL_CSV_HEADER:
            raise DatasetError(path, f"cabecera inválida {header}, se esperaba {','.join(Config.LABEL_CSV_HEADER)}",
                               line=1)
        for line, row in enumerate(reader, start=2):
            if len(row) != len(Config.LABEL_CSV_HEADER):
                raise DatasetError(path, f"se esperaban {len(Config.LABEL_CSV_HEADER)} campos, hay {len(row)}",
                                   line=line)
            try:
                frame, cls, active = int(row[0]), int(row[1]), int(row[2])
                vector = [float(v) for v in row[3:]]
            except ValueError as e:
                raise DatasetError(path, f"valor no numérico: {e}", line=line) from None
            if active not in (0, 1):
                raise DatasetError(path, f"active debe ser 0 o 1, se leyó {active}", line=line)
            if not all(math.isfinite(v) for v in vector):
                raise DatasetError(path, "DOA no finita", line=line)
            norm = math.sqrt(sum(v * v for v in vector))
            if active and abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
                raise DatasetError(path, f"DOA activa con norma {norm}, se esperaba 1", line=line)
            if not active and norm != 0:
                raise DatasetError(path, f"DOA inactiva con norma {norm}, se esperaba 0", line=line)
            rows.append((line, frame, cls, active, vector))

    if n_classes is None:
        n_classes = 1 + max((r[2] for r in rows), default=-1)
    if n_classes < 1 or not rows:
        raise DatasetError(path, "el fichero de etiquetas no tiene filas")
    if len(rows) % n_classes:
        raise DatasetError(path, f"{len(rows)} filas no es múltiplo de {n_classes} clases")
    n_frames = len(rows) // n_classes
    activity = np.zeros((n_frames, n_classes), dtype=np.int64)
    doa = np.zeros((n_frames, n_classes, 3))
    for i, (line, frame, cls, active, vector) in enumerate(rows):
        expected = (i // n_classes, i % n_classes)
        if (frame, cls) != expected:
            raise DatasetError(path, f"fila (frame={frame}, class={cls}) fuera de orden, se esperaba "
                                     f"(frame={expected[0]}, class={expected[1]})", line=line)
        activity[frame, cls] = active
        doa[frame, cls] = vector
    return SeldLabels(activity, doa)


@dataclass
class ClipData:
    clip_id: str
    audio: np.ndarray
    labels: SeldLabels
    split: str
    fold: int


class SeldDataset:
    """
    Dataset cargado: manifiesto y clips (audio ``[L, 4]`` + etiquetas) en el orden del manifiesto.
    """

    def __init__(self, root: Path, manifest: DatasetManifest, clips: List[ClipData]):
        self.root = root
        self.manifest = manifest
        self.clips = clips

    def __iter__(self) -> Iterator[ClipData]:
        return iter(self.clips)

    def __len__(self):
        return len(self.clips)

    def __repr__(self):
        return f"<SeldDataset {self.root} clips={len(self.clips)}>"


def _in_subset(entry: ClipEntry, subset: str, fold: Optional[int], manifest: DatasetManifest) -> bool:
    if subset == "all":
        return True
    if fold is None or manifest.n_splits == 1:
        return entry.split == subset
    held_out = entry.fold == fold
    return held_out if subset == "test" else not held_out


def _read_audio(path: Path, manifest: DatasetManifest) -> np.ndarray:
    try:
        audio, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise DatasetError(path, f"audio ilegible: {e}") from None
    if sample_rate != manifest.sample_rate:
        raise DatasetError(path, f"frecuencia de muestreo {sample_rate}, el manifiesto indica {manifest.sample_rate}")
    if audio.shape[1] != 4:
        raise DatasetError(path, f"se esperaban 4 canales B-format, hay {audio.shape[1]}")
    if audio.shape[0] != manifest.n_samples:
        raise DatasetError(path, f"audio truncado o incompleto: {audio.shape[0]} muestras, "
                                 f"se esperaban {manifest.n_samples}")
    return audio


def load_dataset(path, subset: str = "all", fold: Optional[int] = None,
                 window_length: Optional[int] = None) -> SeldDataset:
    """
    Carga un dataset validando cada clip contra el manifiesto.

    :param path: Directorio del dataset o ruta de su ``meta.json``.
    :param subset: ``all``, ``train`` o ``test``.
    :param fold: Pliegue de validación cruzada a reservar como test (``1..n_splits``). Sin pliegue
        (o con ``n_splits = 1``) se usa la partición fija del manifiesto.
    :param window_length: ``M`` configurado; el número de frames de las etiquetas debe coincidir
        con el de las características para ese ``M``. Por defecto, el del manifiesto.
    :raises DatasetError: Si algún fichero falta o no cumple el formato.
    """
    path = Path(path)
    root = path.parent if path.suffix == ".json" else path
    manifest_path = path if path.suffix == ".json" else path / "meta.json"
    if subset not in ("all", "train", "test"):
        raise ConfigurationError(f"subset debe ser all, train o test, se recibió {subset}")
    manifest = read_manifest(manifest_path)
    if fold is not None and not 1 <= fold <= manifest.n_splits:
        raise ConfigurationError(f"fold debe estar entre 1 y {manifest.n_splits}, se recibió {fold}")
    window_length = window_length or manifest.window_length

    clips = []
    for entry in manifest.clips:
        if not _in_subset(entry, subset, fold, manifest):
            continue
        audio = _read_audio(root / "clips" / f"{entry.id}.wav", manifest)
        label_path = root / "labels" / f"{entry.id}.csv"
        labels = read_labels(label_path, manifest.n_classes)
        expected = frame_count(audio.shape[0], window_length)
        if labels.frames != expected:
            raise DatasetError(label_path, f"{labels.frames} frames de etiqueta, las características con "
                                           f"M={window_length} tienen {expected}")
        clips.append(ClipData(entry.id, audio, labels, entry.split, entry.fold))
    logger.info("Dataset %s: %d clips (%s%s)", root, len(clips), subset,
                "" if fold is None else f", fold {fold}")
    return SeldDataset(root, manifest, clips)


@dataclass
class ClipFeatures:
    clip_id: str
    features: np.ndarray
    labels: SeldLabels


def dataset_features(dataset: SeldDataset, window_length: int) -> List[ClipFeatures]:
    """
    Características ``[frames, M/2, 8]`` de cada clip junto a sus etiquetas.
    """
    out = []
    for clip in dataset:
        feats = clip_features(clip.audio, window_length, dataset.manifest.sample_rate).features
        if feats.shape[0] != clip.labels.frames:
            raise DatasetError(dataset.root / "labels" / f"{clip.clip_id}.csv",
                               f"{clip.labels.frames} frames de etiqueta para {feats.shape[0]} frames de audio")
        out.append(ClipFeatures(clip.clip_id, feats, clip.labels))
    return out


def split_sequences(array: np.ndarray, sequence_frames: int) -> np.ndarray:
    """
    Parte ``array [frames, ...]`` en secuencias consecutivas ``[S, T, ...]``; la última se rellena con ceros.
    """
    if sequence_frames < 1:
        raise ConfigurationError(f"sequence_frames debe ser >= 1, se recibió {sequence_frames}")
    array = np.asarray(array)
    n_seq = max(1, math.ceil(array.shape[0] / sequence_frames))
    padded = np.zeros((n_seq * sequence_frames, *array.shape[1:]), dtype=array.dtype)
    padded[:array.shape[0]] = array
    return padded.reshape(n_seq, sequence_frames, *array.shape[1:])


@dataclass
class SequenceSet:
    """
    Secuencias de entrenamiento: características ``[S, T, F, 8]``, actividad ``[S, T, N]`` y DOA ``[S, T, N, 3]``.
    """
    features: np.ndarray
    activity: np.ndarray
    doa: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    def batch(self, indices) -> tuple:
        return self.features[indices], self.activity[indices], self.doa[indices]


def build_sequences(clips: List[ClipFeatures], sequence_frames: int, stats: Optional[PlaneStats] = None,
                    dtype=np.float64) -> SequenceSet:
    """
    Normaliza (si hay ``stats``) y parte cada clip en secuencias de ``sequence_frames`` frames.
    El relleno de la última secuencia queda con características 0 y etiquetas inactivas.
    """
    features, activity, doa = [], [], []
    for clip in clips:
        feats = stats.apply(clip.features) if stats is not None else clip.features
        features.append(split_sequences(feats, sequence_frames))
        activity.append(split_sequences(clip.labels.activity, sequence_frames))
        doa.append(split_sequences(clip.labels.doa, sequence_frames))
    if not features:
        raise ConfigurationError("No hay clips con los que construir secuencias")
    return SequenceSet(np.concatenate(features).astype(dtype, copy=False),
                       np.concatenate(activity).astype(dtype), np.concatenate(doa).astype(dtype, copy=False))
