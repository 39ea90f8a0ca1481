"""
Convolución 2-D real con relleno "same" y paso 1, implementada con im2col.

Las funciones ``im2col``/``col2im`` trabajan sobre arrays ``[K, B, C, T, F]`` con
un eje de componentes ``K`` (4 para cuaterniones, 1 para reales) y las comparten
la convolución cuaterniónica y la real.
"""
import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.initialization import he_bound, uniform_weights
from BKLibQSeld.layers.layer_base import Layer


def im2col(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """
    Extrae las ventanas ``k×k`` (relleno con ceros) de ``x [K, B, C, T, F]``.

    :return: Array ``[K, C·k·k, B·T·F]``; las filas siguen el orden ``(c, u, v)``.
    """
    k = kernel_size
    pad = k // 2
    n_comp, batch, channels, frames, bins = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n_comp, channels, k, k, batch, frames, bins), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[:, :, :, u:u + frames, v:v + bins].transpose(0, 2, 1, 3, 4)
    return cols.reshape(n_comp, channels * k * k, batch * frames * bins)


def col2im(cols: np.ndarray, shape: tuple, kernel_size: int) -> np.ndarray:
    """
    Adjunta de :func:`im2col`: acumula las ventanas de vuelta sobre ``shape = (K, B, C, T, F)``.
    """
    k = kernel_size
    pad = k // 2
    n_comp, batch, channels, frames, bins = shape
    cols = cols.reshape(n_comp, channels, k, k, batch, frames, bins)
    grad = np.zeros((n_comp, batch, channels, frames + 2 * pad, bins + 2 * pad), dtype=cols.dtype)
    for u in range(k):
        for v in range(k):
            grad[:, :, :, u:u + frames, v:v + bins] += cols[:, :, u, v].transpose(0, 2, 1, 3, 4)
    return grad[:, :, :, pad:pad + frames, pad:pad + bins]


def check_conv_input(name: str, x: np.ndarray, n_comp: int, channels: int):
    if x.ndim != 5:
        raise ShapeError(f"{name}: dimensiones de la entrada", "[K, B, C, T, F]", x.shape)
    if x.shape[0] != n_comp:
        raise ShapeError(f"{name}: componentes de la entrada", n_comp, x.shape[0])
    if x.shape[2] != channels:
        raise ShapeError(f"{name}: canales de la entrada", channels, x.shape[2])
    if x.shape[3] < 1 or x.shape[4] < 1:
        raise ShapeError(f"{name}: tamaño (T, F) de la entrada", "T, F >= 1", x.shape[3:])


class Conv2d(Layer):
    """
    Convolución real ``C -> P`` con kernel ``k×k``, relleno "same" y paso 1.

    Trabaja sobre ``[1, B, C, T, F]`` para compartir layout con el resto de capas
    por planos; se usa en el baseline real.
    """

    def __init__(self, in_channels: int, filters: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "conv", kernel_size: int = Config.KERNEL_SIZE):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        self.add_parameter("kernel", uniform_weights((filters, in_channels, kernel_size, kernel_size),
                                                     he_bound(fan_in), rng, dtype))
        self.add_parameter("bias", np.zeros(filters, dtype=dtype))

    def forward(self, x):
        check_conv_input(self.name, x, 1, self.in_channels)
        _, batch, _, frames, bins = x.shape
        cols = im2col(x, self.kernel_size)[0]
        kmat = self.params["kernel"].reshape(self.filters, -1)
        y = (kmat @ cols).reshape(self.filters, batch, frames, bins).transpose(1, 0, 2, 3)
        y = y + self.params["bias"][None, :, None, None]
        self._cache = (x.shape, cols)
        return y[None]

    def backward(self, grad_out):
        shape, cols = self._require_cache()
        dy = grad_out[0].transpose(1, 0, 2, 3).reshape(self.filters, -1)
        kmat = self.params["kernel"].reshape(self.filters, -1)
        self.grads["kernel"] += (dy @ cols.T).reshape(self.params["kernel"].shape)
        self.grads["bias"] += dy.sum(axis=1)
        return col2im((kmat.T @ dy)[None], shape, self.kernel_size)


def conv2d_forward(layer: Conv2d, x: np.ndarray) -> np.ndarray:
    """
    Aplica ``layer`` a ``x [B, C, T, F]`` (sin eje de componentes) y devuelve ``[B, P, T, F]``.
    """
    return layer.forward(np.asarray(x)[None])[0]


def conv2d_backward(layer: Conv2d, x: np.ndarray, grad_out: np.ndarray):
    """
    :return: ``(grad_input [B, C, T, F], grad_kernel, grad_bias)``; los gradientes de la capa se ponen a cero antes.
    """
    layer.zero_grad()
    layer.forward(np.asarray(x)[None])
    grad_in = layer.backward(np.asarray(grad_out)[None])
    return grad_in[0], layer.grads["kernel"].copy(), layer.grads["bias"].copy()
