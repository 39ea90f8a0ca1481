"""
Checkpoints versionados.

Estructura del fichero (little-endian):

    magic "QSELDCKP" (8 bytes)
    longitud del manifiesto (u32)
    manifiesto JSON UTF-8 (CheckpointManifest)
    blobs de los tensores, en el orden de ``manifest.tensors``
    SHA-256 de todo lo anterior (32 bytes)
"""
import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import CheckpointError, ConfigurationError
from BKLibQSeld.features import PlaneStats
from BKLibQSeld.model import QseldConfig, SeldNetwork, build_network
from BKLibQSeld.optim.adam import AdamState

logger = logging.getLogger(__name__)

_LENGTH = struct.Struct("<I")
_DIGEST_SIZE = hashlib.sha256().digest_size
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class TensorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    dtype: str
    shape: List[int]
    offset: int
    nbytes: int


class AdamEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int
    lr: float
    beta1: float
    beta2: float
    epsilon: float


class CheckpointManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    kind: str
    config: Dict[str, Any]
    precision: str
    seed: int
    stats: Optional[Dict[str, List[float]]] = None
    parameter_count: int
    tensors: List[TensorEntry]
    optimizer: Optional[AdamEntry] = None
    metadata: Dict[str, Any] = {}
    warnings: List[str] = []


@dataclass
class Checkpoint:
    network: SeldNetwork
    manifest: CheckpointManifest
    optimizer: Optional[AdamState] = None


def _dtype_code(array: np.ndarray) -> str:
    code = f"f{array.dtype.itemsize}"
    if array.dtype.kind != "f" or code not in _DTYPES:
        raise CheckpointError(f"Tipo no soportado en checkpoint: {array.dtype}")
    return code


def checkpoint_bytes(network: SeldNetwork, optimizer: Optional[AdamState] = None,
                     metadata: Optional[Dict[str, Any]] = None) -> bytes:
    """
    Serializa la red (parámetros y buffers), la normalización y, opcionalmente, el estado de Adam.
    """
    tensors = dict(network.state())
    if optimizer is not None:
        tensors.update(optimizer.tensors())
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name])
        code = _dtype_code(array)
        blob = array.astype(_DTYPES[code], copy=False).tobytes()
        entries.append(TensorEntry(name=name, dtype=code, shape=list(array.shape), offset=offset, nbytes=len(blob)))
        blobs.append(blob)
        offset += len(blob)
    manifest = CheckpointManifest(
        format_version=Config.CHECKPOINT_FORMAT_VERSION,
        kind=network.kind,
        config=network.config.to_dict(),
        precision=network.config.precision,
        seed=network.seed,
        stats=network.stats.to_dict() if network.stats is not None else None,
        parameter_count=network.count_parameters(),
        tensors=entries,
        optimizer=None if optimizer is None else AdamEntry(step=optimizer.step, lr=optimizer.lr,
                                                           beta1=optimizer.beta1, beta2=optimizer.beta2,
                                                           epsilon=optimizer.epsilon),
        metadata=metadata or {},
    )
    header = manifest.model_dump_json().encode("utf-8")
    body = Config.CHECKPOINT_MAGIC + _LENGTH.pack(len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(network: SeldNetwork, path, optimizer: Optional[AdamState] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Escribe el checkpoint en ``path`` (primero en un temporal y luego lo renombra).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(network, optimizer, metadata))
    tmp.replace(path)
    logger.debug("Checkpoint guardado en %s", path)
    return path


def _parse(data: bytes, source: str):
    magic = Config.CHECKPOINT_MAGIC
    if len(data) < len(magic) + _LENGTH.size + _DIGEST_SIZE:
        raise CheckpointError(f"{source}: fichero truncado ({len(data)} bytes)")
    if data[:len(magic)] != magic:
        raise CheckpointError(f"{source}: no es un checkpoint (magic {data[:len(magic)]!r})")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{source}: checksum inválido, el fichero está corrupto o truncado")
    (length,) = _LENGTH.unpack_from(body, len(magic))
    start = len(magic) + _LENGTH.size
    try:
        manifest = CheckpointManifest.model_validate_json(body[start:start + length])
    except ValidationError as e:
        raise CheckpointError(f"{source}: manifiesto inválido: {e}") from None
    if manifest.format_version != Config.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{source}: versión de formato {manifest.format_version}, "
                              f"se esperaba {Config.CHECKPOINT_FORMAT_VERSION}")
    blobs = body[start + length:]
    tensors = {}
    for entry in manifest.tensors:
        if entry.dtype not in _DTYPES or entry.offset + entry.nbytes > len(blobs):
            raise CheckpointError(f"{source}: tensor '{entry.name}' fuera del fichero o con tipo {entry.dtype}")
        array = np.frombuffer(blobs, dtype=_DTYPES[entry.dtype], count=entry.nbytes // _DTYPES[entry.dtype].itemsize,
                              offset=entry.offset)
        tensors[entry.name] = array.reshape(entry.shape)
    return manifest, tensors


def load_checkpoint(path, precision: Optional[str] = None) -> Checkpoint:
    """
    Lee un checkpoint y reconstruye la red.

    :param precision: Precisión de destino; si difiere de la guardada, los tensores se convierten y
        el aviso queda en ``manifest.warnings``.
    :raises CheckpointError: Magic o versión incorrectos, fichero truncado, checksum inválido o
        tensores que no encajan con la red.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no existe el checkpoint") from None
    manifest, tensors = _parse(data, str(path))

    config_data = dict(manifest.config)
    if precision is not None and precision != manifest.precision:
        message = f"checkpoint guardado en {manifest.precision} cargado en {precision}: los tensores se convierten"
        logger.warning("%s: %s", path, message)
        manifest.warnings.append(message)
        config_data["precision"] = precision
    try:
        config = QseldConfig(**config_data)
    except (ConfigurationError, ValueError, TypeError) as e:
        raise CheckpointError(f"{path}: configuración inválida en el manifiesto: {e}") from None

    network = build_network(config, manifest.seed)
    try:
        network.load_state(tensors)
    except (KeyError, ConfigurationError) as e:
        raise CheckpointError(f"{path}: los tensores no encajan con la red: {e}") from None
    if manifest.stats is not None:
        network.stats = PlaneStats.from_dict(manifest.stats)

    optimizer = None
    if manifest.optimizer is not None:
        o = manifest.optimizer
        optimizer = AdamState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, epsilon=o.epsilon)
        optimizer.load_tensors({k: v.astype(config.dtype) for k, v in tensors.items() if k.startswith("adam.")},
                               o.step)
    return Checkpoint(network, manifest, optimizer)
