import numpy as np

from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.initialization import glorot_bound, uniform_weights
from BKLibQSeld.layers.activation import resolve_activation
from BKLibQSeld.layers.layer_base import Layer


class Dense(Layer):
    """
    Capa densa real ``y = f(x·Wᵀ + b)`` sobre el último eje. Son las ramas SED y DOA del modelo.

    :param in_features: Tamaño de entrada ``D``.
    :param out_features: Tamaño de salida.
    :param activation: Nombre de la activación (relu, sigmoid, tanh, linear).
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 activation: str = "linear", dtype=np.float64, name: str = "dense"):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self._fn, self._derivative = resolve_activation(activation)
        bound = glorot_bound(in_features, out_features)
        self.add_parameter("weight", uniform_weights((out_features, in_features), bound, rng, dtype))
        self.add_parameter("bias", np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: tamaño de entrada", self.in_features, x.shape[-1])
        pre = x @ self.params["weight"].T + self.params["bias"]
        y = self._fn(pre)
        self._cache = (x, pre, y)
        return y

    def backward(self, grad_out):
        x, pre, y = self._require_cache()
        d_pre = grad_out * self._derivative(pre, y)
        flat_x = x.reshape(-1, self.in_features)
        flat_d = d_pre.reshape(-1, self.out_features)
        self.grads["weight"] += flat_d.T @ flat_x
        self.grads["bias"] += flat_d.sum(axis=0)
        return d_pre @ self.params["weight"]

    def branch_state(self):
        if self.activation != "relu" or self._cache is None:
            return []
        return [self._cache[1] > 0]


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    return layer.forward(np.asarray(x))


def dense_backward(layer: Dense, x: np.ndarray, grad_out: np.ndarray):
    """
    :return: ``(grad_input, grad_weight, grad_bias)`` con los gradientes de la capa puestos a cero antes.
    """
    layer.zero_grad()
    layer.forward(np.asarray(x))
    grad_in = layer.backward(np.asarray(grad_out))
    return grad_in, layer.grads["weight"].copy(), layer.grads["bias"].copy()
