"""
GRU bidireccional real con propagación hacia atrás en el tiempo explícita.

Convención de puertas (r, z, n) por dirección:

    r = σ(W_ir·x + b_ir + W_hr·h + b_hr)
    z = σ(W_iz·x + b_iz + W_hz·h + b_hz)
    n = tanh(W_in·x + b_in + r·(W_hn·h + b_hn))
    h' = (1 − z)·n + z·h

Los pesos de las tres puertas van apilados: ``w_ih [3Q, D]``, ``w_hh [3Q, Q]``,
``b_ih [3Q]``, ``b_hh [3Q]``. La dirección inversa recorre la secuencia al revés
y su salida se devuelve alineada con los frames originales.
"""
import math

import numpy as np
from scipy.special import expit

from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.initialization import uniform_weights
from BKLibQSeld.layers.layer_base import Layer

DIRECTIONS = ("fw", "bw")


class BiGRU(Layer):
    """
    Capa recurrente bidireccional: ``[B, T, D] -> [B, T, 2Q]`` (dirección directa primero).

    :param input_size: Tamaño ``D`` de cada frame.
    :param hidden_size: Tamaño ``Q`` del estado oculto por dirección.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "bigru"):
        super().__init__(name)
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / math.sqrt(hidden_size)
        q = hidden_size
        for d in DIRECTIONS:
            self.add_parameter(f"w_ih_{d}", uniform_weights((3 * q, input_size), bound, rng, dtype))
            self.add_parameter(f"w_hh_{d}", uniform_weights((3 * q, q), bound, rng, dtype))
            self.add_parameter(f"b_ih_{d}", uniform_weights((3 * q,), bound, rng, dtype))
            self.add_parameter(f"b_hh_{d}", uniform_weights((3 * q,), bound, rng, dtype))

    def _run(self, x, d):
        q = self.hidden_size
        w_hh, b_hh = self.params[f"w_hh_{d}"], self.params[f"b_hh_{d}"]
        gi = x @ self.params[f"w_ih_{d}"].T + self.params[f"b_ih_{d}"]
        batch, frames, _ = x.shape
        h = np.zeros((batch, q), dtype=gi.dtype)
        out = np.empty((batch, frames, q), dtype=gi.dtype)
        steps = []
        for t in range(frames):
            gh = h @ w_hh.T + b_hh
            r = expit(gi[:, t, :q] + gh[:, :q])
            z = expit(gi[:, t, q:2 * q] + gh[:, q:2 * q])
            hn = gh[:, 2 * q:]
            n = np.tanh(gi[:, t, 2 * q:] + r * hn)
            h_prev = h
            h = (1 - z) * n + z * h_prev
            out[:, t] = h
            steps.append((h_prev, r, z, n, hn))
        return out, steps

    def _run_backward(self, x, steps, grad_h_seq, d):
        q = self.hidden_size
        w_ih, w_hh = self.params[f"w_ih_{d}"], self.params[f"w_hh_{d}"]
        batch, frames, _ = x.shape
        d_gi = np.zeros((batch, frames, 3 * q), dtype=grad_h_seq.dtype)
        dh = np.zeros((batch, q), dtype=grad_h_seq.dtype)
        for t in reversed(range(frames)):
            h_prev, r, z, n, hn = steps[t]
            dh = dh + grad_h_seq[:, t]
            dn_pre = dh * (1 - z) * (1 - n * n)
            dz_pre = dh * (h_prev - n) * z * (1 - z)
            dr_pre = dn_pre * hn * r * (1 - r)
            d_gi[:, t, :q] = dr_pre
            d_gi[:, t, q:2 * q] = dz_pre
            d_gi[:, t, 2 * q:] = dn_pre
            d_gh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
            self.grads[f"w_hh_{d}"] += d_gh.T @ h_prev
            self.grads[f"b_hh_{d}"] += d_gh.sum(axis=0)
            dh = dh * z + d_gh @ w_hh
        flat_d = d_gi.reshape(-1, 3 * q)
        self.grads[f"w_ih_{d}"] += flat_d.T @ x.reshape(-1, self.input_size)
        self.grads[f"b_ih_{d}"] += flat_d.sum(axis=0)
        return d_gi @ w_ih

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"{self.name}: entrada", f"[B, T, {self.input_size}]", x.shape)
        if x.shape[1] < 1:
            raise ShapeError(f"{self.name}: frames de la entrada", "T >= 1", x.shape[1])
        reversed_x = x[:, ::-1]
        out_fw, steps_fw = self._run(x, "fw")
        out_bw, steps_bw = self._run(reversed_x, "bw")
        self._cache = (x, reversed_x, steps_fw, steps_bw)
        return np.concatenate([out_fw, out_bw[:, ::-1]], axis=2)

    def backward(self, grad_out):
        x, reversed_x, steps_fw, steps_bw = self._require_cache()
        q = self.hidden_size
        grad_fw = self._run_backward(x, steps_fw, grad_out[..., :q], "fw")
        grad_bw = self._run_backward(reversed_x, steps_bw, grad_out[:, ::-1, q:], "bw")
        return grad_fw + grad_bw[:, ::-1]


def bigru_forward(layer: BiGRU, seq: np.ndarray) -> np.ndarray:
    """
    Aplica ``layer`` a una secuencia ``[T, D]`` (o a un lote ``[B, T, D]``) y devuelve ``[T, 2Q]``.
    """
    seq = np.asarray(seq)
    if seq.ndim == 2:
        return layer.forward(seq[None])[0]
    return layer.forward(seq)
