from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from BKLibQSeld.exceptions import OptimizationError


@dataclass
class AdamState:
    """
    Estado de Adam: momentos por parámetro, contador de pasos e hiperparámetros.
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> Dict[str, np.ndarray]:
        """
        Momentos con nombres cualificados (``adam.m.<param>``), como se guardan en un checkpoint.
        """
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    def load_tensors(self, tensors: Dict[str, np.ndarray], step: int):
        self.step = step
        self.m = {k[len("adam.m."):]: np.array(a) for k, a in tensors.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(a) for k, a in tensors.items() if k.startswith("adam.v.")}


class Adam:
    """
    Optimizador Adam con corrección de sesgo. Actualiza los parámetros in place.

    :param state: Estado a continuar; si no se da, se crea uno nuevo con ``lr``, ``beta1``, ``beta2`` y ``epsilon``.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 state: AdamState = None):
        self.state = state if state is not None else AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """
        Un paso de Adam sobre todos los parámetros.

        :raises OptimizationError: Si algún gradiente no es finito; en ese caso no se toca ningún parámetro.
        """
        for k in params:
            if not np.all(np.isfinite(grads[k])):
                raise OptimizationError("Gradiente no finito, se aborta el paso de Adam", parameter=k)
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        step_size = s.lr / bc1
        for k in params:
            g = grads[k]
            if k not in s.m:
                s.m[k] = np.zeros_like(params[k])
                s.v[k] = np.zeros_like(params[k])
            s.m[k] *= s.beta1
            s.m[k] += (1.0 - s.beta1) * g
            s.v[k] *= s.beta2
            s.v[k] += (1.0 - s.beta2) * (g * g)
            denom = np.sqrt(s.v[k] * (1.0 / bc2)) + s.epsilon
            params[k] -= step_size * s.m[k] / denom


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> AdamState:
    """
    Versión funcional de :meth:`Adam.step`: actualiza ``params`` in place y devuelve el estado.
    """
    Adam(state=state).step(params, grads)
    return state
