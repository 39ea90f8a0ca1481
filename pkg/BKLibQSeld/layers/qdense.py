import numpy as np

from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.initialization import quaternion_weights
from BKLibQSeld.layers.activation import SplitActivation
from BKLibQSeld.layers.layer_base import Layer
from BKLibQSeld.quaternion import QuatTensor, hamilton_matmul, hamilton_matmul_backward


class QDense(Layer):
    """
    Capa densa cuaterniónica ``y = α(W ⊗ x + b)``.

    :param in_features: Entradas cuaterniónicas.
    :param out_features: Salidas cuaterniónicas.
    :param activation: Activación split aplicada a la salida.
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 activation: str = "linear", dtype=np.float64, name: str = "qdense"):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.activation = SplitActivation(activation, name=f"{name}.act")
        self.add_parameter("weight", quaternion_weights((out_features, in_features), in_features, rng, dtype))
        self.add_parameter("bias", np.zeros((4, out_features), dtype=dtype))

    def forward(self, x):
        """
        :param x: Planos ``[4, ..., in]``.
        :return: Planos ``[4, ..., out]``.
        """
        if x.shape[0] != 4 or x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: entrada", f"[4, ..., {self.in_features}]", x.shape)
        lead = x.shape[1:-1]
        flat = x.reshape(4, -1, self.in_features).transpose(0, 2, 1)
        pre = hamilton_matmul(self.params["weight"], flat).transpose(0, 2, 1)
        pre = pre + self.params["bias"][:, None, :]
        self._cache = (lead, flat)
        return self.activation.forward(pre).reshape(4, *lead, self.out_features)

    def backward(self, grad_out):
        lead, flat = self._require_cache()
        d_pre = self.activation.backward(grad_out.reshape(4, -1, self.out_features))
        grad_w, grad_flat = hamilton_matmul_backward(self.params["weight"], flat, d_pre.transpose(0, 2, 1))
        self.grads["weight"] += grad_w
        self.grads["bias"] += d_pre.sum(axis=1)
        return grad_flat.transpose(0, 2, 1).reshape(4, *lead, self.in_features)

    def branch_state(self):
        return self.activation.branch_state()


def qdense_forward(layer: QDense, x: QuatTensor) -> QuatTensor:
    """
    Aplica ``layer`` a un vector cuaterniónico ``[in]`` (o a un lote ``[..., in]``).
    """
    return QuatTensor(layer.forward(x.to_stacked()))
