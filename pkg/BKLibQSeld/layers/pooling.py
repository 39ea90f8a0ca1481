from typing import Tuple

import numpy as np

from BKLibQSeld.exceptions import ConfigurationError
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.quaternion import QuatTensor


def _pool(x: np.ndarray, factor: int, name: str = "max_pool_freq"):
    bins = x.shape[-1]
    if factor < 1 or bins % factor != 0:
        raise ConfigurationError(f"{name}: F={bins} no es divisible por el factor de pooling {factor}")
    windows = x.reshape(*x.shape[:-1], bins // factor, factor)
    indices = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, indices[..., None], axis=-1)[..., 0]
    return out, indices


class MaxPoolFreq(Layer):
    """
    Max-pooling por planos en ventanas no solapadas del eje de frecuencia (último eje).
    El eje temporal no se toca. Los índices del máximo se guardan para encaminar el gradiente.
    """

    def __init__(self, factor: int, name: str = "pool"):
        super().__init__(name)
        if factor < 1:
            raise ConfigurationError(f"{name}: el factor de pooling debe ser >= 1, se recibió {factor}")
        self.factor = factor

    def forward(self, x):
        out, indices = _pool(x, self.factor, self.name)
        self._cache = (x.shape, indices)
        return out

    def backward(self, grad_out):
        shape, indices = self._require_cache()
        grad = np.zeros((*shape[:-1], shape[-1] // self.factor, self.factor), dtype=grad_out.dtype)
        np.put_along_axis(grad, indices[..., None], grad_out[..., None], axis=-1)
        return grad.reshape(shape)

    def branch_state(self):
        return [] if self._cache is None else [self._cache[1]]


def max_pool_freq(x: QuatTensor, factor: int) -> Tuple[QuatTensor, np.ndarray]:
    """
    Pooling de ``x [C, T, F]`` a ``[C, T, F/factor]``.

    :return: ``(salida, índices)`` con los índices del máximo dentro de cada ventana, por plano.
    :raises ConfigurationError: Si ``F`` no es divisible por ``factor``.
    """
    out, indices = _pool(x.to_stacked(), factor)
    return QuatTensor(out), indices
