import numpy as np

from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.quaternion import QuatTensor

ACTIVATIONS = Config.ACTIVATION_FUNCTIONS


def resolve_activation(kind: str):
    """
    Devuelve ``(f, f')`` para el nombre de activación dado.

    :raises ConfigurationError: Si la activación no existe.
    """
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"Activación no reconocida: {kind}. Disponibles: {sorted(ACTIVATIONS)}") from None


class SplitActivation(Layer):
    """
    Activación split: ``f`` se aplica de forma independiente a cada plano real,
    conservando las unidades imaginarias. En la ReLU el subgradiente en 0 es 0.
    """

    def __init__(self, kind: str = "relu", name: str = "activation"):
        super().__init__(name)
        self.kind = kind
        self._fn, self._derivative = resolve_activation(kind)

    def forward(self, x):
        y = self._fn(x)
        self._cache = (x, y)
        return y

    def backward(self, grad_out):
        x, y = self._require_cache()
        return grad_out * self._derivative(x, y)

    def branch_state(self):
        if self.kind != "relu" or self._cache is None:
            return []
        return [self._cache[0] > 0]


def split_activation(x: QuatTensor, kind: str) -> QuatTensor:
    """
    ``α(q) = f(q_W) + f(q_X)·i + f(q_Y)·j + f(q_Z)·k`` para ``kind`` en {relu, sigmoid, tanh, linear}.
    """
    fn, _ = resolve_activation(kind)
    return QuatTensor(np.asarray(fn(x.to_stacked())))
