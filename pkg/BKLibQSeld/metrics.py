"""
Métricas SELD: ER y F por segmentos, error de DOA, frame recall K y puntuaciones conjuntas.

    S_SED  = (ER + (1 − F)) / 2
    S_DOA  = (DOA_err/180 + (1 − K)) / 2
    S_SELD = (S_SED + S_DOA) / 2

Convenciones sin eventos de referencia: F = 1 si tampoco hay predicciones (0/0), ER = 0 si no
hay predicciones e infinito si hay inserciones. Sin pares (frame, clase) activos a la vez en
predicción y referencia, DOA_err = 180.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.data_types import FloatType
from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.record import Record

WORST_DOA_ERROR = 180.0


class MetricReport(Record):
    fields = {
        "ER": FloatType("ER", doc="Error rate por segmentos", min_value=0),
        "F": FloatType("F", doc="F-score por segmentos", min_value=0, max_value=1),
        "DOA_err": FloatType("DOA_err", doc="Error medio de DOA (grados)", min_value=0, max_value=180),
        "K": FloatType("K", doc="Frame recall", min_value=0, max_value=1),
        "S_SED": FloatType("S_SED", doc="Puntuación SED"),
        "S_DOA": FloatType("S_DOA", doc="Puntuación DOA"),
        "S_SELD": FloatType("S_SELD", doc="Puntuación SELD"),
    }

    @classmethod
    def from_metrics(cls, er: float, f: float, doa_err: float, k: float) -> "MetricReport":
        s_sed, s_doa, s_seld = seld_scores(er, f, doa_err, k)
        return cls(ER=er, F=f, DOA_err=doa_err, K=k, S_SED=s_sed, S_DOA=s_doa, S_SELD=s_seld)

    def csv_row(self) -> list:
        return [self._data[c] for c in Config.METRIC_COLUMNS]


@dataclass
class SegmentCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference: int = 0

    def __iadd__(self, other: "SegmentCounts"):
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def error_rate(self) -> float:
        errors = self.substitutions + self.deletions + self.insertions
        if self.reference == 0:
            return 0.0 if errors == 0 else math.inf
        return errors / self.reference

    def f_score(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else 2 * self.tp / denom


def _check_pair(name, pred, gt):
    if pred.shape != gt.shape:
        raise ShapeError(name, gt.shape, pred.shape)


def segment_presence(activity: np.ndarray, segment_frames: int) -> np.ndarray:
    """
    ``[T, N] -> [S, N]``: una clase está presente en un segmento si está activa en algún frame suyo.
    """
    if segment_frames < 1:
        raise ValueError(f"segment_frames debe ser >= 1, se recibió {segment_frames}")
    activity = np.asarray(activity) > 0
    n_seg = math.ceil(activity.shape[0] / segment_frames)
    padded = np.zeros((n_seg * segment_frames, activity.shape[1]), dtype=bool)
    padded[:activity.shape[0]] = activity
    return padded.reshape(n_seg, segment_frames, -1).any(axis=1)


def segment_counts(pred_activity, gt_activity, segment_frames: int) -> SegmentCounts:
    pred_activity, gt_activity = np.asarray(pred_activity), np.asarray(gt_activity)
    _check_pair("segment_sed_metrics: actividad predicha", pred_activity, gt_activity)
    pred = segment_presence(pred_activity, segment_frames)
    gt = segment_presence(gt_activity, segment_frames)
    fn_seg = (gt & ~pred).sum(axis=1)
    fp_seg = (pred & ~gt).sum(axis=1)
    return SegmentCounts(
        tp=int((pred & gt).sum()),
        fp=int(fp_seg.sum()),
        fn=int(fn_seg.sum()),
        substitutions=int(np.minimum(fn_seg, fp_seg).sum()),
        deletions=int(np.maximum(0, fn_seg - fp_seg).sum()),
        insertions=int(np.maximum(0, fp_seg - fn_seg).sum()),
        reference=int(gt.sum()),
    )


def segment_sed_metrics(pred_activity, gt_activity, segment_frames: int) -> Tuple[float, float]:
    """
    ER y F por segmentos de ``segment_frames`` frames.

    :return: ``(ER, F)``.
    """
    counts = segment_counts(pred_activity, gt_activity, segment_frames)
    return counts.error_rate(), counts.f_score()


@dataclass
class DoaCounts:
    angle_sum: float = 0.0
    pairs: int = 0
    matching_frames: int = 0
    frames: int = 0

    def __iadd__(self, other: "DoaCounts"):
        self.angle_sum += other.angle_sum
        self.pairs += other.pairs
        self.matching_frames += other.matching_frames
        self.frames += other.frames
        return self

    def doa_error(self) -> float:
        return WORST_DOA_ERROR if self.pairs == 0 else self.angle_sum / self.pairs

    def frame_recall(self) -> float:
        return 1.0 if self.frames == 0 else self.matching_frames / self.frames


def doa_counts(pred_doa, gt_doa, pred_activity, gt_activity) -> DoaCounts:
    pred_doa, gt_doa = np.asarray(pred_doa, dtype=np.float64), np.asarray(gt_doa, dtype=np.float64)
    pred_activity, gt_activity = np.asarray(pred_activity) > 0, np.asarray(gt_activity) > 0
    _check_pair("doa_metrics: DOA predicha", pred_doa, gt_doa)
    _check_pair("doa_metrics: actividad predicha", pred_activity, gt_activity)
    if pred_doa.shape != (*gt_activity.shape, 3):
        raise ShapeError("doa_metrics: DOA", (*gt_activity.shape, 3), pred_doa.shape)
    pred_norm = np.linalg.norm(pred_doa, axis=-1)
    gt_norm = np.linalg.norm(gt_doa, axis=-1)
    pairs = pred_activity & gt_activity & (pred_norm > 0) & (gt_norm > 0)
    u = pred_doa[pairs] / pred_norm[pairs][:, None]
    v = gt_doa[pairs] / gt_norm[pairs][:, None]
    cosines = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    angles = np.degrees(np.arccos(cosines))
    matches = pred_activity.sum(axis=1) == gt_activity.sum(axis=1)
    return DoaCounts(float(angles.sum()), int(pairs.sum()), int(matches.sum()), int(matches.size))


def doa_metrics(pred_doa, gt_doa, pred_activity, gt_activity) -> Tuple[float, float]:
    """
    Error medio de DOA (grados) sobre los pares (frame, clase) activos en predicción y referencia,
    y frame recall ``K``: fracción de frames con el mismo número de clases activas.

    :param pred_doa: ``[T, N, 3]``; los vectores se normalizan y los nulos se excluyen.
    :return: ``(DOA_err, K)``.
    """
    counts = doa_counts(pred_doa, gt_doa, pred_activity, gt_activity)
    return counts.doa_error(), counts.frame_recall()


def seld_scores(er: float, f: float, doa_err: float, k: float) -> Tuple[float, float, float]:
    """
    :return: ``(S_SED, S_DOA, S_SELD)``.
    """
    s_sed = (er + (1.0 - f)) / 2.0
    s_doa = (doa_err / WORST_DOA_ERROR + (1.0 - k)) / 2.0
    return s_sed, s_doa, (s_sed + s_doa) / 2.0


class SeldMetricAccumulator:
    """
    Acumula conteos clip a clip (los segmentos nunca cruzan dos clips) y calcula el informe final.

    :param segment_frames: Frames por segmento SED.
    :param threshold: Umbral sobre las probabilidades SED para decidir actividad.
    """

    def __init__(self, segment_frames: int, threshold: float = 0.5):
        self.segment_frames = segment_frames
        self.threshold = threshold
        self.segments = SegmentCounts()
        self.doa = DoaCounts()
        self.clips = 0

    def update(self, pred_activity, gt_activity, pred_doa, gt_doa):
        """
        :param pred_activity: Actividad binaria ``[T, N]``.
        :param pred_doa: ``[T, N, 3]`` (o ``[T, 3N]``).
        """
        gt_activity = np.asarray(gt_activity)
        pred_doa = np.asarray(pred_doa).reshape(*gt_activity.shape, 3)
        gt_doa = np.asarray(gt_doa).reshape(*gt_activity.shape, 3)
        self.segments += segment_counts(pred_activity, gt_activity, self.segment_frames)
        self.doa += doa_counts(pred_doa, gt_doa, pred_activity, gt_activity)
        self.clips += 1

    def update_probabilities(self, probabilities, gt_activity, pred_doa, gt_doa):
        self.update(np.asarray(probabilities) > self.threshold, gt_activity, pred_doa, gt_doa)

    def compute(self) -> MetricReport:
        return MetricReport.from_metrics(self.segments.error_rate(), self.segments.f_score(),
                                         self.doa.doa_error(), self.doa.frame_recall())


def write_report(report: MetricReport, directory) -> Path:
    """
    Escribe ``report.json`` (una clave por métrica) y ``report.csv`` (cabecera y una fila) en ``directory``.

    :return: Ruta de ``report.csv``.
    """
    directory = Path(directory)
    (directory / "report.json").write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    path = directory / "report.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(Config.METRIC_COLUMNS)
        writer.writerow([Config.FLOAT_FORMAT.format(v) for v in report.csv_row()])
    return path
