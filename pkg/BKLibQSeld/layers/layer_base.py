from abc import ABC, abstractmethod
from typing import Dict, Iterable, List

import numpy as np

from BKLibQSeld.exceptions import ShapeError


class Layer(ABC):
    """
    Clase base para las capas con propagación hacia delante y hacia atrás explícitas.

    Las capas trabajan sobre arrays de numpy. Los tensores cuaterniónicos viajan
    apilados por planos (``[4, ...]``); las capas reales usan un único plano
    (``[1, ...]``) o arrays reales sin eje de componentes, según el caso.

    Cada capa guarda:
        params: parámetros entrenables por clave local.
        grads: gradientes acumulados, mismas claves y formas que ``params``.
        buffers: estado no entrenable (estadísticas de batch norm).

    Los nombres públicos se cualifican con ``<nombre de capa>.<clave>``.
    """

    def __init__(self, name: str):
        self.name = name
        self.training = True
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache = None

    def add_parameter(self, key: str, value: np.ndarray) -> np.ndarray:
        self.params[key] = value
        self.grads[key] = np.zeros_like(value)
        return value

    def add_buffer(self, key: str, value: np.ndarray) -> np.ndarray:
        self.buffers[key] = value
        return value

    @abstractmethod
    def forward(self, x):
        """
        Calcula la salida de la capa y guarda lo necesario para ``backward``.
        """

    @abstractmethod
    def backward(self, grad_out):
        """
        Recibe ``dL/dsalida``, acumula los gradientes de los parámetros y devuelve ``dL/dentrada``.
        """

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward llamado antes de forward")
        return self._cache

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def train(self, mode: bool = True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.{k}": v for k, v in self.params.items()}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.{k}": v for k, v in self.grads.items()}

    def state(self) -> Dict[str, np.ndarray]:
        """
        Parámetros y buffers cualificados; es lo que se persiste en un checkpoint.
        """
        state = self.parameters()
        state.update({f"{self.name}.{k}": v for k, v in self.buffers.items()})
        return state

    def load_state(self, state: Dict[str, np.ndarray]):
        """
        Copia ``state`` sobre los arrays de la capa (in place, conservando el dtype de la capa).

        :raises ShapeError: Si alguna forma no coincide.
        :raises KeyError: Si falta alguna clave.
        """
        for key, target in self.state().items():
            value = np.asarray(state[key])
            if value.shape != target.shape:
                raise ShapeError(key, target.shape, value.shape)
            np.copyto(target, value, casting="unsafe")

    def branch_state(self) -> List[np.ndarray]:
        """
        Patrón discreto del último forward (máscara de la ReLU, índices del máximo...).
        Dos forwards con el mismo patrón están en la misma región diferenciable.
        """
        return []

    def count_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"<{self.__class__.__name__} {self.name} {shapes}>"


class LayerStack(Layer):
    """
    Secuencia de capas: ``forward`` en orden y ``backward`` en orden inverso.
    """

    def __init__(self, name: str, layers: Iterable[Layer]):
        super().__init__(name)
        self.layers: List[Layer] = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self

    def _collect(self, attr: str) -> Dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(getattr(layer, attr)())
        return out

    def parameters(self):
        return self._collect("parameters")

    def gradients(self):
        return self._collect("gradients")

    def state(self):
        return self._collect("state")

    def load_state(self, state):
        for layer in self.layers:
            layer.load_state(state)

    def branch_state(self):
        return [s for layer in self.layers for s in layer.branch_state()]

    def count_parameters(self) -> int:
        return sum(layer.count_parameters() for layer in self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)
