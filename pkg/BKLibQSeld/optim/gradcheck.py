"""
Verificación de gradientes por diferencias centrales.

Para cada tensor (parámetros y, opcionalmente, la entrada) se compara el
gradiente analítico ``a`` del ``backward`` con ``n = (L(θ+h) − L(θ−h)) / 2h`` y se
mide el error relativo por elemento ``|a − n| / max(|a|, |n|, floor)``; el error de un tensor
es el máximo sobre sus elementos.

Las entradas cuyo desplazamiento ±h cambia el patrón discreto de la red
(máscara de la ReLU, índices del max-pooling) caen sobre un punto no
diferenciable y se cuentan como omitidas en lugar de compararse.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError, PrecisionError
from BKLibQSeld.layers.activation import SplitActivation
from BKLibQSeld.layers.batch_norm import SplitBatchNorm
from BKLibQSeld.layers.conv import Conv2d
from BKLibQSeld.layers.dense import Dense
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.layers.pooling import MaxPoolFreq
from BKLibQSeld.layers.qconv import QConv2d
from BKLibQSeld.layers.qdense import QDense
from BKLibQSeld.layers.recurrent import BiGRU
from BKLibQSeld.layers.reshape import PlanesToSequence
from BKLibQSeld.model import QseldConfig, build_network
from BKLibQSeld.optim.losses import LossConfig, bce_loss, masked_mse_loss, seld_loss

logger = logging.getLogger(__name__)

INPUT_NAME = "<input>"


@dataclass
class GradcheckReport:
    max_rel_err: float = 0.0
    worst_param: Optional[str] = None
    errors: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0
    tolerance: float = Config.GRADCHECK_TOLERANCE

    def passed(self, tolerance: Optional[float] = None) -> bool:
        return self.max_rel_err < (self.tolerance if tolerance is None else tolerance)

    def record(self, name: str, rel_err: float):
        self.errors[name] = rel_err
        if self.worst_param is None or rel_err > self.max_rel_err:
            self.max_rel_err = rel_err
            self.worst_param = name


def _branch(layer):
    fn = getattr(layer, "branch_state", None)
    return fn() if fn else []


def _same_branch(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _require_doubles(name, array):
    if np.asarray(array).dtype != np.float64:
        raise PrecisionError(f"gradcheck necesita float64; '{name}' es {np.asarray(array).dtype}")


def gradcheck(layer, x, loss_fn: Callable, step: float = Config.GRADCHECK_STEP,
              floor: float = Config.GRADCHECK_FLOOR, check_input: bool = True,
              max_entries: Optional[int] = None, seed: int = 0) -> GradcheckReport:
    """
    Compara el ``backward`` de ``layer`` con diferencias centrales.

    :param layer: Objeto con ``forward``, ``backward``, ``parameters``, ``gradients`` y ``zero_grad``
        (una capa, una pila de capas o la red completa).
    :param x: Entrada de ``forward`` (array float64).
    :param loss_fn: ``loss_fn(salida) -> (pérdida escalar, dL/dsalida)``.
    :param step: Paso ``h`` de las diferencias centrales.
    :param floor: Suelo del denominador del error relativo.
    :param check_input: Incluir también el gradiente respecto a ``x``.
    :param max_entries: Si se da, número de entradas por tensor elegidas al azar (con ``seed``);
        si no, se comprueban todas.
    :raises PrecisionError: Si algún parámetro o la entrada no está en float64.
    """
    x = np.asarray(x)
    params = layer.parameters()
    for name, value in params.items():
        _require_doubles(name, value)
    if check_input:
        _require_doubles(INPUT_NAME, x)

    snapshot = {k: v.copy() for k, v in layer.state().items()} if hasattr(layer, "state") else None
    layer.zero_grad()
    out = layer.forward(x)
    base_branch = _branch(layer)
    _, grad_out = loss_fn(out)
    grad_x = layer.backward(grad_out)
    analytic = {name: g.copy() for name, g in layer.gradients().items()}

    targets = dict(params)
    if check_input:
        x = x.copy()
        targets[INPUT_NAME] = x
        analytic[INPUT_NAME] = np.asarray(grad_x)

    def evaluate():
        loss, _ = loss_fn(layer.forward(x))
        return loss, _branch(layer)

    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for name, value in targets.items():
        flat = value.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a = analytic[name].reshape(-1)[indices]
        numeric = np.zeros_like(a)
        valid = np.ones(indices.size, dtype=bool)
        for pos, i in enumerate(indices):
            original = flat[i]
            flat[i] = original + step
            plus, branch_plus = evaluate()
            flat[i] = original - step
            minus, branch_minus = evaluate()
            flat[i] = original
            if not (_same_branch(branch_plus, base_branch) and _same_branch(branch_minus, base_branch)):
                valid[pos] = False
                continue
            numeric[pos] = (plus - minus) / (2.0 * step)
        report.skipped += int((~valid).sum())
        report.checked += int(valid.sum())
        if not valid.any():
            continue
        a, numeric = a[valid], numeric[valid]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        report.record(name, float(np.max(np.abs(a - numeric) / denom)))

    if snapshot is not None:
        layer.load_state(snapshot)
    logger.debug("gradcheck: max_rel_err=%.3e en %s (%d comprobadas, %d omitidas)",
                 report.max_rel_err, report.worst_param, report.checked, report.skipped)
    return report


class InputProbe(Layer):
    """
    Capa identidad sin parámetros: permite verificar el gradiente de una pérdida respecto a su entrada.
    """

    def __init__(self, name: str = "probe"):
        super().__init__(name)

    def forward(self, x):
        return x

    def backward(self, grad_out):
        return grad_out


@dataclass
class GradcheckCase:
    layer: Layer
    x: np.ndarray
    loss_fn: Callable
    max_entries: Optional[int] = None
    tolerance: float = Config.GRADCHECK_TOLERANCE


def projection_loss(shape, rng: np.random.Generator) -> Callable:
    """
    ``L = Σ R ⊙ salida`` con ``R`` gaussiana fija: el gradiente de salida es ``R``.
    """
    weights = rng.standard_normal(shape)
    return lambda out: (float(np.sum(out * weights)), weights.astype(out.dtype, copy=False))


def _model_case(kind: str, rng: np.random.Generator, dtype) -> GradcheckCase:
    precision = "f64" if dtype == np.float64 else "f32"
    config = QseldConfig(kind=kind, filters=2, pool_factors=[4, 2, 2], sequence_frames=8, window_length=64,
                         rnn_hidden=4, fc_width=8, n_classes=2, precision=precision)
    network = build_network(config, seed=int(rng.integers(2 ** 31)))
    x = rng.standard_normal((2, 8, 32, 8)).astype(dtype)
    activity = (rng.random((2, 8, 2)) < 0.5).astype(dtype)
    directions = rng.standard_normal((2, 8, 2, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    labels = (activity, directions * activity[..., None])
    return GradcheckCase(network, x, lambda out: _seld_grads(out, labels), max_entries=8,
                         tolerance=Config.GRADCHECK_MODEL_TOLERANCE)


def _seld_grads(outputs, labels):
    loss = seld_loss(outputs, labels, LossConfig(doa_weight=5.0))
    return loss.total, (loss.grad_sed, loss.grad_doa)


def gradcheck_cases(seed: int = 0, precision: str = "f64") -> Dict[str, Callable[[], GradcheckCase]]:
    """
    Casos de verificación por tipo de capa y pérdida, con formas pequeñas y semilla fija.

    Cada valor construye el caso al llamarlo, así ``--layer`` solo paga lo que comprueba.
    """
    dtype = Config.dtype(precision)
    rng = np.random.default_rng(seed)

    def normal(*shape):
        return rng.standard_normal(shape).astype(dtype)

    def case(layer, x):
        return GradcheckCase(layer, x, projection_loss(layer.forward(x).shape, rng), max_entries=24)

    def bce_case():
        target = (rng.random((3, 4)) < 0.5).astype(dtype)
        x = rng.uniform(0.05, 0.95, (3, 4)).astype(dtype)
        return GradcheckCase(InputProbe("bce"), x, lambda out: bce_loss(out, target))

    def mse_case():
        target = normal(5, 6)
        mask = (rng.random((5, 2)) < 0.6).astype(dtype)
        mask[0, 0] = 1
        return GradcheckCase(InputProbe("mse"), normal(5, 6), lambda out: masked_mse_loss(out, target, mask))

    return {
        "qconv2d": lambda: case(QConv2d(2, 3, rng, dtype, name="qconv2d"), normal(4, 2, 2, 5, 6)),
        "conv2d": lambda: case(Conv2d(3, 4, rng, dtype, name="conv2d"), normal(1, 2, 3, 5, 6)),
        "qdense": lambda: case(QDense(3, 2, rng, "tanh", dtype, name="qdense"), normal(4, 5, 3)),
        "dense": lambda: case(Dense(6, 4, rng, "sigmoid", dtype, name="dense"), normal(5, 6)),
        "activation": lambda: case(SplitActivation("relu", name="activation"), normal(4, 3, 7)),
        "batch_norm": lambda: case(SplitBatchNorm(3, 4, dtype, name="batch_norm"), normal(4, 4, 3, 2, 5)),
        "pooling": lambda: case(MaxPoolFreq(2, name="pooling"), normal(4, 2, 2, 3, 8)),
        "bigru": lambda: case(BiGRU(5, 4, rng, dtype, name="bigru"), normal(2, 6, 5)),
        "reshape": lambda: case(PlanesToSequence(name="reshape"), normal(4, 2, 3, 5, 2)),
        "bce": bce_case,
        "mse": mse_case,
        "model": lambda: _model_case("quaternion", rng, dtype),
        "model_real": lambda: _model_case("real", rng, dtype),
    }


def run_gradcheck_suite(names=None, seed: int = 0, precision: str = "f64") -> Dict[str, GradcheckReport]:
    """
    Ejecuta :func:`gradcheck` sobre los casos pedidos (todos si ``names`` es None).

    :raises ConfigurationError: Si algún nombre no es un caso conocido.
    :raises PrecisionError: Si ``precision`` no es f64.
    """
    if precision != "f64":
        raise PrecisionError(f"gradcheck necesita precisión f64, se pidió {precision}")
    cases = gradcheck_cases(seed, precision)
    names = list(cases) if names is None else list(names)
    unknown = [n for n in names if n not in cases]
    if unknown:
        raise ConfigurationError(f"Casos de gradcheck desconocidos: {unknown}. Disponibles: {list(cases)}")
    reports = {}
    for name in names:
        c = cases[name]()
        reports[name] = gradcheck(c.layer, c.x, c.loss_fn, max_entries=c.max_entries, seed=seed)
        reports[name].tolerance = c.tolerance
    return reports
