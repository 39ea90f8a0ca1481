import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError, ShapeError
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.quaternion import QuatTensor

_REDUCE_AXES = (1, 3, 4)


class SplitBatchNorm(Layer):
    """
    Batch normalization split: cada plano real (componente × canal) se estandariza
    por separado con sus estadísticas de batch y después se escala y desplaza.

    Entrada y salida ``[K, B, C, T, F]``; ``K = 4`` para cuaterniones y ``K = 1`` en el baseline real.

    :param channels: Canales ``C``.
    :param components: Planos por canal ``K``.
    :param momentum: Peso de la nueva estadística en la media móvil.
    :param epsilon: Suelo de la varianza.
    """

    def __init__(self, channels: int, components: int = 4, dtype=np.float64, name: str = "bn",
                 momentum: float = Config.BATCH_NORM_MOMENTUM, epsilon: float = Config.BATCH_NORM_EPSILON):
        super().__init__(name)
        self.channels = channels
        self.components = components
        self.momentum = momentum
        self.epsilon = epsilon
        self.add_parameter("gamma", np.ones((components, channels), dtype=dtype))
        self.add_parameter("beta", np.zeros((components, channels), dtype=dtype))
        self.add_buffer("running_mean", np.zeros((components, channels), dtype=dtype))
        self.add_buffer("running_var", np.ones((components, channels), dtype=dtype))

    @staticmethod
    def _expand(v):
        return v[:, None, :, None, None]

    def forward(self, x):
        if x.ndim != 5 or x.shape[0] != self.components or x.shape[2] != self.channels:
            raise ShapeError(f"{self.name}: entrada", f"[{self.components}, B, {self.channels}, T, F]", x.shape)
        gamma = self._expand(self.params["gamma"])
        beta = self._expand(self.params["beta"])
        if self.training:
            if x.shape[1] < 2:
                raise ConfigurationError(f"{self.name}: batch norm en modo train necesita batch >= 2, "
                                         f"se recibió {x.shape[1]}")
            mean = x.mean(axis=_REDUCE_AXES, keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=_REDUCE_AXES, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            x_hat = centered * inv_std
            n = x.size // (self.components * self.channels)
            m = self.momentum
            self.buffers["running_mean"] *= 1 - m
            self.buffers["running_mean"] += m * mean[:, 0, :, 0, 0]
            self.buffers["running_var"] *= 1 - m
            self.buffers["running_var"] += m * var[:, 0, :, 0, 0] * (n / (n - 1))
            self._cache = ("train", x_hat, inv_std, n)
        else:
            inv_std = 1.0 / np.sqrt(self._expand(self.buffers["running_var"]) + self.epsilon)
            x_hat = (x - self._expand(self.buffers["running_mean"])) * inv_std
            self._cache = ("eval", x_hat, inv_std, None)
        return gamma * x_hat + beta

    def backward(self, grad_out):
        mode, x_hat, inv_std, n = self._require_cache()
        self.grads["gamma"] += (grad_out * x_hat).sum(axis=_REDUCE_AXES)
        self.grads["beta"] += grad_out.sum(axis=_REDUCE_AXES)
        d_hat = grad_out * self._expand(self.params["gamma"])
        if mode == "eval":
            return d_hat * inv_std
        sum_d = d_hat.sum(axis=_REDUCE_AXES, keepdims=True)
        sum_dx = (d_hat * x_hat).sum(axis=_REDUCE_AXES, keepdims=True)
        return inv_std / n * (n * d_hat - sum_d - x_hat * sum_dx)


def split_batch_norm_forward(bn: SplitBatchNorm, x: QuatTensor, mode: str = "train") -> QuatTensor:
    """
    Normaliza ``x [B, C, T, F]`` con ``bn`` en modo ``train`` o ``eval``.

    En ``train`` se actualizan las estadísticas móviles; en ``eval`` se usan.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode debe ser 'train' o 'eval', se recibió {mode}")
    bn.train(mode == "train")
    return QuatTensor(bn.forward(x.to_stacked()))
