"""
Álgebra de cuaterniones: escalares, tensores por planos y producto de Hamilton.

Un cuaternión ``w + x·i + y·j + z·k`` se guarda como cuatro componentes reales.
Los tensores cuaterniónicos (:class:`QuatTensor`) guardan un plano real por
componente en un único array ``[4, ...]`` (estructura de arrays), que es el
mismo layout que usan las capas.

El producto de Hamilton ``W ⊗ x`` se expande en 16 productos reales:

    r = Ww·xw − Wx·xx − Wy·xy − Wz·xz
    i = Ww·xx + Wx·xw + Wy·xz − Wz·xy
    j = Ww·xy − Wx·xz + Wy·xw + Wz·xx
    k = Ww·xz + Wx·xy − Wy·xx + Wz·xw

``HAMILTON_TERMS`` recoge esa tabla como (componente de salida, componente de W,
componente de x, signo) y la reutilizan el producto escalar, el matricial y la
convolución.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from BKLibQSeld.exceptions import ShapeError

COMPONENTS = ("w", "x", "y", "z")

HAMILTON_TERMS = (
    (0, 0, 0, 1.0), (0, 1, 1, -1.0), (0, 2, 2, -1.0), (0, 3, 3, -1.0),
    (1, 0, 1, 1.0), (1, 1, 0, 1.0), (1, 2, 3, 1.0), (1, 3, 2, -1.0),
    (2, 0, 2, 1.0), (2, 1, 3, -1.0), (2, 2, 0, 1.0), (2, 3, 1, 1.0),
    (3, 0, 3, 1.0), (3, 1, 2, 1.0), (3, 2, 1, -1.0), (3, 3, 0, 1.0),
)


@dataclass(frozen=True)
class Quaternion:
    """
    Cuaternión escalar inmutable ``w + x·i + y·j + z·k``.
    """
    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        w, x, y, z = (float(v) for v in values)
        return cls(w, x, y, z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton_product(self, other)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)


def hamilton_combine(a: np.ndarray, b: np.ndarray, contract: Callable) -> np.ndarray:
    """
    Aplica la tabla de Hamilton con una contracción bilineal arbitraria.

    :param a: Array ``[4, ...]`` del operando izquierdo (pesos).
    :param b: Array ``[4, ...]`` del operando derecho (entrada).
    :param contract: Función bilineal ``contract(a_c, b_c)`` sobre un par de planos
        (producto elemento a elemento, producto matricial...).
    :return: Array ``[4, ...]`` con los cuatro planos del resultado.
    """
    out = [None, None, None, None]
    for o, ca, cb, sign in HAMILTON_TERMS:
        term = contract(a[ca], b[cb])
        if out[o] is None:
            out[o] = term if sign > 0 else -term
        elif sign > 0:
            out[o] = out[o] + term
        else:
            out[o] = out[o] - term
    return np.stack(out)


def hamilton_product(p: Quaternion, q: Quaternion) -> Quaternion:
    """
    Producto de Hamilton ``p ⊗ q`` de dos cuaterniones escalares.

    >>> hamilton_product(Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0))
    Quaternion(w=0.0, x=0.0, y=0.0, z=1.0)
    """
    return Quaternion.from_array(hamilton_combine(p.as_array(), q.as_array(), np.multiply))


def conjugate_and_norm(q: Quaternion) -> Tuple[Quaternion, float]:
    """
    Devuelve el conjugado ``(w, −x, −y, −z)`` y la norma euclídea de ``q``.
    """
    conj = Quaternion(q.w, -q.x, -q.y, -q.z)
    return conj, math.sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z)


class QuatTensor:
    """
    Tensor de cuaterniones almacenado como cuatro planos reales (W, X, Y, Z) de igual forma.

    :param data: Array real ``[4, *shape]``.
    :raises ShapeError: Si el primer eje no tiene tamaño 4.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim < 1 or data.shape[0] != 4:
            raise ShapeError("planos de QuatTensor", "eje 0 de tamaño 4", data.shape)
        self.data = data

    @classmethod
    def from_planes(cls, w, x, y, z) -> "QuatTensor":
        planes = [np.asarray(p) for p in (w, x, y, z)]
        shapes = {p.shape for p in planes}
        if len(shapes) != 1:
            raise ShapeError("planos de QuatTensor", "una única forma", sorted(shapes))
        return cls(np.stack(planes))

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "QuatTensor":
        return cls(np.zeros((4, *shape), dtype=dtype))

    @classmethod
    def from_features(cls, features: np.ndarray) -> "QuatTensor":
        """
        Empaqueta características ``[..., T, F, 8]`` (|W|,|X|,|Y|,|Z|, ∠W,∠X,∠Y,∠Z)
        en dos canales cuaterniónicos: canal 0 = magnitudes, canal 1 = fases.

        :return: QuatTensor de forma ``[..., 2, T, F]``.
        """
        features = np.asarray(features)
        if features.shape[-1] != 8:
            raise ShapeError("planos de características", 8, features.shape[-1])
        lead = features.shape[:-3]
        t, f = features.shape[-3], features.shape[-2]
        # [..., T, F, 2, 4] -> [4, ..., 2, T, F]
        grouped = features.reshape(*lead, t, f, 2, 4)
        n = len(lead)
        axes = (n + 3,) + tuple(range(n)) + (n + 2, n, n + 1)
        return cls(np.ascontiguousarray(grouped.transpose(axes)))

    def to_features(self) -> np.ndarray:
        """
        Operación inversa de :meth:`from_features`: ``[..., 2, T, F]`` -> ``[..., T, F, 8]``.
        """
        if len(self.shape) < 3 or self.shape[-3] != 2:
            raise ShapeError("canales cuaterniónicos de características", 2, self.shape)
        n = len(self.shape) - 3
        axes = tuple(range(1, n + 1)) + (n + 2, n + 3, n + 1, 0)
        moved = self.data.transpose(axes)
        return np.ascontiguousarray(moved).reshape(*moved.shape[:-2], 8)

    @property
    def shape(self) -> tuple:
        return self.data.shape[1:]

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def planes(self) -> tuple:
        return tuple(self.data[c] for c in range(4))

    @property
    def w(self):
        return self.data[0]

    @property
    def x(self):
        return self.data[1]

    @property
    def y(self):
        return self.data[2]

    @property
    def z(self):
        return self.data[3]

    def to_stacked(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "QuatTensor":
        return QuatTensor(self.data.astype(dtype))

    def copy(self) -> "QuatTensor":
        return QuatTensor(self.data.copy())

    def conjugate(self) -> "QuatTensor":
        out = self.data.copy()
        out[1:] *= -1
        return QuatTensor(out)

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data * self.data, axis=0))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __getitem__(self, index) -> "Quaternion":
        return Quaternion.from_array(self.data[(slice(None),) + (index if isinstance(index, tuple) else (index,))])

    def __mul__(self, other: "QuatTensor") -> "QuatTensor":
        """Producto de Hamilton elemento a elemento (con broadcasting)."""
        return QuatTensor(hamilton_combine(self.data, other.data, np.multiply))

    def __repr__(self):
        return f"<QuatTensor shape={self.shape} dtype={self.dtype}>"


def hamilton_matmul(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Producto matricial cuaterniónico ``W ⊗ X``.

    :param w: Array ``[4, P, K]``.
    :param x: Array ``[4, K, N]``.
    :return: Array ``[4, P, N]`` con ``Y_o = Σ ± W_a @ X_b`` según la tabla de Hamilton.
    """
    return hamilton_combine(w, x, np.matmul)


def hamilton_matmul_backward(w: np.ndarray, x: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradientes de ``Y = W ⊗ X`` respecto a ``W`` y ``X`` dado ``dL/dY``.

    :return: ``(grad_w [4, P, K], grad_x [4, K, N])``.
    """
    grad_w = np.zeros_like(w, dtype=np.result_type(w, grad_y))
    grad_x = np.zeros_like(x, dtype=np.result_type(x, grad_y))
    for o, cw, cx, sign in HAMILTON_TERMS:
        if sign > 0:
            grad_w[cw] += grad_y[o] @ x[cx].T
            grad_x[cx] += w[cw].T @ grad_y[o]
        else:
            grad_w[cw] -= grad_y[o] @ x[cx].T
            grad_x[cx] -= w[cw].T @ grad_y[o]
    return grad_w, grad_x


def to_real_block(wq: QuatTensor) -> np.ndarray:
    """
    Representación real ``[4·out, 4·in]`` de una matriz cuaterniónica ``[out, in]``.

    Multiplicar por el vector apilado ``(v_W, v_X, v_Y, v_Z)`` equivale a ``Wq ⊗ v``.
    Cada peso escalar ``(w, x, y, z)`` aporta el bloque

        [[w, −x, −y, −z],
         [x,  w, −z,  y],
         [y,  z,  w, −x],
         [z, −y,  x,  w]]

    :raises ShapeError: Si la matriz no es 2-D.
    """
    if len(wq.shape) != 2:
        raise ShapeError("to_real_block", "matriz cuaterniónica 2-D", wq.shape)
    out_dim, in_dim = wq.shape
    block = np.zeros((4, out_dim, 4, in_dim), dtype=wq.dtype)
    for o, cw, cx, sign in HAMILTON_TERMS:
        block[o, :, cx, :] = sign * wq.data[cw]
    return block.reshape(4 * out_dim, 4 * in_dim)
