from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.layers.layer_base import Layer


class PlanesToSequence(Layer):
    """
    Reorganiza la salida convolucional ``[K, B, C, T, F]`` en una secuencia real
    ``[B, T, F·K·C]``: para cada frame se concatenan, por bin de frecuencia, los
    ``K·C`` mapas reales. Con ``F = 2``, ``K = 4`` y ``C = P`` queda ``T × 8P``.
    """

    def __init__(self, name: str = "reshape"):
        super().__init__(name)

    def forward(self, x):
        if x.ndim != 5:
            raise ShapeError(f"{self.name}: entrada", "[K, B, C, T, F]", x.shape)
        n_comp, batch, channels, frames, bins = x.shape
        self._cache = x.shape
        return x.transpose(1, 3, 4, 0, 2).reshape(batch, frames, bins * n_comp * channels)

    def backward(self, grad_out):
        n_comp, batch, channels, frames, bins = self._require_cache()
        grad = grad_out.reshape(batch, frames, bins, n_comp, channels)
        return grad.transpose(3, 0, 4, 1, 2)
