"""
Punto de entrada ``bkqseld``: síntesis, entrenamiento, evaluación, predicción,
verificación de gradientes y comparación de modelos.

Cada ejecución crea ``runs/<fecha>-<tag>/`` con ``config.json`` (configuración
resuelta), ``run.log`` y las salidas del comando.

Estado de salida: 0 éxito, 1 fallo del comando (cualquier ``QSeldError``), 2 error de uso.
"""
import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from BKLibQSeld.checkpoint import load_checkpoint
from BKLibQSeld.config import Config
from BKLibQSeld.data_types import EnumType, FloatType, IntegerType, ListType, StringType
from BKLibQSeld.dataset import SeldLabels, build_sequences, dataset_features, load_dataset, read_manifest, write_labels
from BKLibQSeld.exceptions import ConfigurationError, DatasetError, QSeldError
from BKLibQSeld.features import PlaneStats
from BKLibQSeld.metrics import SeldMetricAccumulator, write_report
from BKLibQSeld.model import QseldConfig, build_network, predict
from BKLibQSeld.optim.gradcheck import gradcheck_cases, run_gradcheck_suite
from BKLibQSeld.optim.losses import LossConfig
from BKLibQSeld.optim.trainer import TrainConfig, evaluate_network, segment_frame_count, train
from BKLibQSeld.record import Record
from BKLibQSeld.synth import SynthConfig, synth_dataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.qseld"
COMPARISON_COLUMNS = ("model", "kind", "parameters") + Config.METRIC_COLUMNS
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class RunConfig(Record):
    """
    Configuración plana de una ejecución: todas las claves de síntesis, modelo, entrenamiento y evaluación.

    Orden de resolución: valores por defecto, preset, fichero ``--config``, ``--set clave=valor``
    y por último ``--seed``. Sin semilla explícita se usa la variable de entorno ``QSELD_SEED``.
    """
    fields = {
        "seed": IntegerType("seed", doc="Semilla global", default=0, min_value=0),
        "precision": EnumType("precision", doc="f32 o f64", default=Config.DEFAULT_PRECISION,
                              choices=tuple(Config.PRECISIONS)),
        "threads": IntegerType("threads", doc="Máximo de hilos de trabajo", default=1, min_value=1),
        "tag": StringType("tag", doc="Etiqueta del directorio de la ejecución", default="", max_length=64),
        # síntesis
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
        "test_fraction": FloatType("test_fraction", doc="Fracción de clips de test", default=0.25,
                                   min_value=0, max_value=0.9),
        "n_splits": IntegerType("n_splits", doc="Particiones de validación cruzada", default=3, min_value=1),
        "split": IntegerType("split", doc="Pliegue reservado como test (0: partición fija)", default=0, min_value=0),
        # modelo
        "filters": IntegerType("filters", doc="Filtros P", default=2, min_value=1),
        "conv_layers": IntegerType("conv_layers", doc="Capas convolucionales", default=3, min_value=1),
        "pool_factors": ListType("pool_factors", doc="Pooling en frecuencia por capa", default=[4, 2, 2],
                                 subtype=IntegerType, subtype_options={"min_value": 1}),
        "sequence_frames": IntegerType("sequence_frames", doc="Frames T por secuencia", default=8, min_value=1),
        "window_length": IntegerType("window_length", doc="Longitud de ventana M", default=64),
        "rnn_hidden": IntegerType("rnn_hidden", doc="Estado oculto Q", default=16, min_value=1),
        "fc_width": IntegerType("fc_width", doc="Anchura R de las ramas", default=16, min_value=1),
        # entrenamiento
        "epochs": IntegerType("epochs", doc="Épocas", default=300, min_value=0),
        "batch_size": IntegerType("batch_size", doc="Secuencias por mini-batch", default=16, min_value=2),
        "lr": FloatType("lr", doc="Tasa de aprendizaje", default=1e-3, exclusive_min=0),
        "beta1": FloatType("beta1", doc="β1 de Adam", default=0.9, min_value=0, max_value=1),
        "beta2": FloatType("beta2", doc="β2 de Adam", default=0.999, min_value=0, max_value=1),
        "adam_epsilon": FloatType("adam_epsilon", doc="ε de Adam", default=1e-8, exclusive_min=0),
        "doa_weight": FloatType("doa_weight", doc="Peso λ de la pérdida DOA", default=5.0, min_value=0),
        # evaluación
        "threshold": FloatType("threshold", doc="Umbral de actividad SED", default=0.5, min_value=0, max_value=1),
        "segment_seconds": FloatType("segment_seconds", doc="Duración de los segmentos de ER/F", default=1.0,
                                     exclusive_min=0),
    }

    def check(self):
        if self.split > self.n_splits:
            raise ConfigurationError(f"split={self.split} supera n_splits={self.n_splits}")
        self.project(SynthConfig)
        self.project(QseldConfig)
        self.project(TrainConfig)

    @property
    def fold(self) -> Optional[int]:
        return self.split or None


def _assigns_seed(assignments: List[str]) -> bool:
    return any(a.partition("=")[0].strip() == "seed" for a in assignments)


def resolve_run_config(args, environ=os.environ) -> RunConfig:
    """
    Construye la :class:`RunConfig` de los argumentos.

    :raises ConfigurationError: Fichero de configuración ilegible o claves inválidas.
    :raises ValueError: Valores fuera de rango (también los errores de pydantic).
    """
    data = Config.preset(args.preset) if args.preset else {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"No se puede leer {args.config}: {e}") from None
        data.update(RunConfig.validate_document(text))
    seed_given = "seed" in data or _assigns_seed(args.set)
    run = RunConfig(**data).with_overrides(args.set)
    if args.seed is not None:
        run = run.replace(seed=args.seed)
    elif not seed_given and environ.get(Config.SEED_ENV_VAR):
        run = run.replace(seed=environ[Config.SEED_ENV_VAR])
    if args.threads is not None:
        run = run.replace(threads=args.threads)
    if args.tag is not None:
        run = run.replace(tag=args.tag)
    return run


def create_run_dir(base, tag: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(base)
    run_dir = base / f"{stamp}-{tag}"
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = base / f"{stamp}-{tag}-{suffix}"
    run_dir.mkdir(parents=True)
    return run_dir


def configure_logging(level: str, run_dir: Path, quiet: bool = False) -> List[logging.Handler]:
    """
    Configura el logger raíz: stderr (solo avisos con ``quiet``) y ``run.log`` en el directorio de la ejecución.

    :return: Los handlers añadidos, para retirarlos al terminar.
    """
    formatter = logging.Formatter(Config.LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(logging.WARNING if quiet else level)
    file_handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    file_handler.setLevel(level)
    root = logging.getLogger()
    root.setLevel(level)
    for handler in (stream, file_handler):
        handler.setFormatter(formatter)
        root.addHandler(handler)
    return [stream, file_handler]


def _check_dataset_path(path) -> Path:
    path = Path(path)
    manifest = path if path.suffix == ".json" else path / "meta.json"
    if not manifest.exists():
        raise DatasetError(manifest, "no existe el dataset (falta meta.json)")
    return manifest


def _load_model(path, run: RunConfig, manifest_path: Path):
    """
    Carga el checkpoint y comprueba que ``M`` y ``N`` coinciden con el dataset antes de inferir.
    """
    checkpoint = load_checkpoint(path, run.precision)
    manifest = read_manifest(manifest_path)
    config = checkpoint.network.config
    if config.window_length != manifest.window_length:
        raise ConfigurationError(f"{path}: M={config.window_length} en el checkpoint, el dataset usa "
                                 f"M={manifest.window_length}")
    if config.n_classes != manifest.n_classes:
        raise ConfigurationError(f"{path}: N={config.n_classes} en el checkpoint, el dataset tiene "
                                 f"{manifest.n_classes} clases")
    return checkpoint


def _test_clips(data, run: RunConfig, window_length: int):
    dataset = load_dataset(data, "test", run.fold, window_length)
    if not len(dataset):
        raise ConfigurationError("El subconjunto de test está vacío (test_fraction=0 y sin split)")
    return dataset


def cmd_synth(run: RunConfig, run_dir: Path, args) -> int:
    out = Path(args.dataset_dir) if args.dataset_dir else run_dir / "dataset"
    manifest_path = synth_dataset(run.project(SynthConfig), out, run.threads)
    print(manifest_path)
    return 0


def cmd_train(run: RunConfig, run_dir: Path, args) -> int:
    _check_dataset_path(args.data)
    window_length = run.window_length
    train_set = load_dataset(args.data, "train", run.fold, window_length)
    test_set = load_dataset(args.data, "test", run.fold, window_length)
    manifest = train_set.manifest
    config = run.project(QseldConfig).replace(kind=args.baseline, n_classes=manifest.n_classes)
    network = build_network(config, run.seed)

    train_clips = dataset_features(train_set, window_length)
    network.stats = PlaneStats.fit([c.features for c in train_clips])
    sequences = build_sequences(train_clips, config.sequence_frames, network.stats, config.dtype)
    valid_clips = dataset_features(test_set, window_length) or None
    checkpoint_path = run_dir / CHECKPOINT_NAME
    result = train(network, sequences, run.project(TrainConfig), valid_clips,
                   segment_frame_count(run.segment_seconds, manifest.sample_rate, window_length),
                   checkpoint_path=checkpoint_path, log_path=run_dir / "train_log.csv",
                   progress=not args.quiet and sys.stderr.isatty())
    print(checkpoint_path)
    return 1 if result.diverged else 0


def cmd_eval(run: RunConfig, run_dir: Path, args) -> int:
    manifest_path = _check_dataset_path(args.data)
    if args.oracle:
        dataset = _test_clips(args.data, run, None)
        segment_frames = segment_frame_count(run.segment_seconds, dataset.manifest.sample_rate,
                                             dataset.manifest.window_length)
        accumulator = SeldMetricAccumulator(segment_frames, run.threshold)
        for clip in dataset:
            accumulator.update(clip.labels.activity, clip.labels.activity, clip.labels.doa, clip.labels.doa)
        report = accumulator.compute()
    else:
        network = _load_model(args.checkpoint, run, manifest_path).network
        window_length = network.config.window_length
        dataset = _test_clips(args.data, run, window_length)
        segment_frames = segment_frame_count(run.segment_seconds, dataset.manifest.sample_rate, window_length)
        loss, report = evaluate_network(network, dataset_features(dataset, window_length), run.threshold,
                                        segment_frames, LossConfig(run.doa_weight))
        logger.info("Pérdida de evaluación: %.5f", loss)
    write_report(report, run_dir)
    print(report.to_json(indent=2))
    return 0


def _predicted_labels(probs: np.ndarray, doa: np.ndarray, threshold: float) -> SeldLabels:
    norms = np.linalg.norm(doa, axis=-1)
    active = (probs > threshold) & (norms > 0)
    unit = np.where(active[..., None], doa / np.where(norms > 0, norms, 1.0)[..., None], 0.0)
    return SeldLabels(active.astype(np.int64), unit)


def cmd_predict(run: RunConfig, run_dir: Path, args) -> int:
    manifest_path = _check_dataset_path(args.data)
    network = _load_model(args.checkpoint, run, manifest_path).network
    window_length = network.config.window_length
    dataset = load_dataset(args.data, args.subset, run.fold, window_length)
    out_dir = run_dir / "predictions"
    out_dir.mkdir()
    for clip in dataset_features(dataset, window_length):
        probs, doa = predict(network, clip.features)
        write_labels(out_dir / f"{clip.clip_id}.csv", _predicted_labels(probs, doa, run.threshold))
    logger.info("%d predicciones escritas en %s", len(dataset), out_dir)
    print(out_dir)
    return 0


def cmd_gradcheck(run: RunConfig, run_dir: Path, args) -> int:
    names = None if args.layer == "all" else [args.layer]
    reports = run_gradcheck_suite(names, run.seed, run.precision)
    for name, report in reports.items():
        status = "ok" if report.passed() else "FALLO"
        print(f"{name}: max_rel_err={report.max_rel_err:.3e} ({report.worst_param}) "
              f"{report.checked} comprobadas, {report.skipped} omitidas [{status}]")
    worst = max(reports, key=lambda n: reports[n].max_rel_err)
    print(f"max_rel_err={reports[worst].max_rel_err:.3e} en {worst}")
    summary = {name: {"max_rel_err": r.max_rel_err, "worst_param": r.worst_param, "checked": r.checked,
                      "skipped": r.skipped, "tolerance": r.tolerance} for name, r in reports.items()}
    (run_dir / "gradcheck.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return 0 if all(r.passed() for r in reports.values()) else 1


def cmd_compare(run: RunConfig, run_dir: Path, args) -> int:
    manifest_path = _check_dataset_path(args.data)
    clips_by_window = {}
    rows = []
    for path in args.checkpoints:
        checkpoint = _load_model(path, run, manifest_path)
        network = checkpoint.network
        m = network.config.window_length
        if m not in clips_by_window:
            clips_by_window[m] = dataset_features(_test_clips(args.data, run, m), m)
        segment_frames = segment_frame_count(run.segment_seconds, read_manifest(manifest_path).sample_rate, m)
        _, report = evaluate_network(network, clips_by_window[m], run.threshold, segment_frames,
                                     LossConfig(run.doa_weight))
        rows.append([str(path), network.kind, checkpoint.manifest.parameter_count] + report.csv_row())
        logger.info("%s (%s, %d parámetros): S_SELD=%.4f", path, network.kind,
                    checkpoint.manifest.parameter_count, report.S_SELD)
    with (run_dir / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        writer.writerows(rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Fichero JSON con claves de RunConfig")
    common.add_argument("--preset", choices=sorted(Config.PRESETS), help="Preset de partida")
    common.add_argument("--set", action="append", default=[], metavar="CLAVE=VALOR",
                        help="Sobrescribe una clave (repetible)")
    common.add_argument("--seed", type=int, help=f"Semilla (por defecto {Config.SEED_ENV_VAR} o 0)")
    common.add_argument("--out", default=Config.RUNS_DIR, help="Directorio base de las ejecuciones")
    common.add_argument("--tag", help="Etiqueta del directorio de la ejecución")
    common.add_argument("--threads", type=int, help="Máximo de hilos de trabajo")
    common.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    common.add_argument("--quiet", action="store_true", help="Solo avisos en stderr y sin barra de progreso")

    parser = argparse.ArgumentParser(prog="bkqseld", description="Detección y localización de eventos sonoros "
                                                                 "con redes cuaterniónicas")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Genera un dataset B-format sintético")
    p.add_argument("--dataset-dir", help="Destino del dataset (por defecto <run>/dataset)")

    p = sub.add_parser("train", parents=[common], help="Entrena QSELD o el baseline real")
    p.add_argument("--data", required=True, help="Directorio del dataset")
    p.add_argument("--baseline", choices=("quaternion", "real"), default="quaternion")

    p = sub.add_parser("eval", parents=[common], help="Evalúa un checkpoint sobre el test")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="Usa las etiquetas como predicción")

    p = sub.add_parser("predict", parents=[common], help="Escribe predicciones en formato de etiquetas")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("all", "train", "test"), default="test")

    p = sub.add_parser("gradcheck", parents=[common], help="Verifica los gradientes por diferencias centrales")
    p.add_argument("--layer", choices=["all"] + list(gradcheck_cases()), default="all")

    p = sub.add_parser("compare", parents=[common], help="Compara varios checkpoints sobre el mismo test")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    return parser


def main(argv: Optional[List[str]] = None, environ=os.environ) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "eval" and not (args.checkpoint or args.oracle):
        print("bkqseld eval: se necesita --checkpoint o --oracle", file=sys.stderr)
        return 2
    try:
        run = resolve_run_config(args, environ)
    except (ValueError, TypeError) as e:
        print(f"bkqseld: configuración inválida: {e}", file=sys.stderr)
        return 2

    run_dir = create_run_dir(args.out, run.tag or args.command)
    (run_dir / "config.json").write_text(run.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")
    handlers = configure_logging(args.log_level, run_dir, args.quiet)
    logger.info("bkqseld %s en %s (seed=%d, precision=%s)", args.command, run_dir, run.seed, run.precision)
    try:
        return COMMANDS[args.command](run, run_dir, args)
    except QSeldError as e:
        logger.error("%s", e)
        return 1
    finally:
        root = logging.getLogger()
        for handler in handlers:
            root.removeHandler(handler)
            handler.close()
