"""
Convolución 2-D cuaterniónica.

Cada salida es la suma, sobre canales de entrada y ventana 3×3, de
``kernel ⊗ entrada`` más un sesgo cuaterniónico. Con 4 planos por tensor, el
producto de Hamilton se reduce a 16 productos matriciales reales sobre las
columnas de ``im2col``.
"""
from typing import Tuple

import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.initialization import quaternion_weights
from BKLibQSeld.layers.conv import check_conv_input, col2im, im2col
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.quaternion import QuatTensor, hamilton_matmul, hamilton_matmul_backward


class QConv2d(Layer):
    """
    Capa de convolución cuaterniónica ``C_in -> P`` con kernel 3×3, paso 1 y relleno "same".

    :param in_channels: Canales cuaterniónicos de entrada.
    :param filters: Número de filtros cuaterniónicos ``P`` (equivale a ``4·P`` mapas reales).
    :param rng: Generador para la inicialización polar.
    :param dtype: Tipo real de los parámetros.
    :param name: Nombre de la capa (prefijo de sus parámetros).
    """

    def __init__(self, in_channels: int, filters: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "qconv", kernel_size: int = Config.KERNEL_SIZE):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        n_i = in_channels * kernel_size * kernel_size
        self.add_parameter("kernel", quaternion_weights((filters, in_channels, kernel_size, kernel_size),
                                                        n_i, rng, dtype))
        self.add_parameter("bias", np.zeros((4, filters), dtype=dtype))

    def _kernel_matrix(self) -> np.ndarray:
        return self.params["kernel"].reshape(4, self.filters, -1)

    def forward(self, x):
        """
        :param x: Planos ``[4, B, C_in, T, F]``.
        :return: Planos ``[4, B, P, T, F]``.
        """
        check_conv_input(self.name, x, 4, self.in_channels)
        _, batch, _, frames, bins = x.shape
        cols = im2col(x, self.kernel_size)
        y = hamilton_matmul(self._kernel_matrix(), cols)
        y = y.reshape(4, self.filters, batch, frames, bins).transpose(0, 2, 1, 3, 4)
        y = y + self.params["bias"][:, None, :, None, None]
        self._cache = (x.shape, cols)
        return y

    def backward(self, grad_out):
        shape, cols = self._require_cache()
        dy = grad_out.transpose(0, 2, 1, 3, 4).reshape(4, self.filters, -1)
        grad_kernel, grad_cols = hamilton_matmul_backward(self._kernel_matrix(), cols, dy)
        self.grads["kernel"] += grad_kernel.reshape(self.params["kernel"].shape)
        self.grads["bias"] += dy.sum(axis=2)
        return col2im(grad_cols, shape, self.kernel_size)


def _batched(x: QuatTensor) -> Tuple[np.ndarray, bool]:
    data = x.to_stacked()
    if data.ndim == 4:
        return data[:, None], True
    return data, False


def qconv2d_forward(layer: QConv2d, x: QuatTensor) -> QuatTensor:
    """
    Aplica ``layer`` a ``x`` de forma ``[C_in, T, F]`` (o ``[B, C_in, T, F]``).
    """
    data, squeeze = _batched(x)
    y = layer.forward(data)
    return QuatTensor(y[:, 0] if squeeze else y)


def qconv2d_backward(layer: QConv2d, x: QuatTensor, grad_out: QuatTensor):
    """
    Gradientes de una pérdida escalar respecto a la entrada, los kernels y el sesgo.

    Pone a cero los gradientes acumulados de ``layer`` antes de calcularlos.

    :return: ``(grad_input: QuatTensor, grad_kernels: ndarray [4, P, C, 3, 3], grad_bias: ndarray [4, P])``.
    """
    data, squeeze = _batched(x)
    grad = grad_out.to_stacked()
    if squeeze:
        grad = grad[:, None]
    layer.zero_grad()
    layer.forward(data)
    grad_in = layer.backward(grad)
    return (QuatTensor(grad_in[:, 0] if squeeze else grad_in),
            layer.grads["kernel"].copy(), layer.grads["bias"].copy())
