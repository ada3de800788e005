"""Tanh multilayer perceptrons with explicit reverse-mode gradients.

Parameters live in one flat float64 vector so a single Adam state can
update them; per-layer weights and biases are views into it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, TapeMismatch


def default_widths(d: int) -> list[int]:
    return [max(2 * d, 128), max(4 * d, 256), max(4 * d, 256), max(4 * d, 256), max(2 * d, 128)]


class MlpParams:
    """Weights ``W[k]`` (fan_in x fan_out) and biases ``b[k]`` of an MLP.

    With ``residual=True`` the network computes ``x + f(x)`` instead of
    ``f(x)``; the generators use that form so a small output layer means a
    small displacement.
    """

    def __init__(self, dim: int, widths, theta: np.ndarray | None = None,
                 residual: bool = False):
        self.dim = int(dim)
        self.widths = [int(w) for w in widths]
        self.residual = bool(residual)
        sizes = [self.dim, *self.widths, self.dim]
        self.shapes = list(zip(sizes[:-1], sizes[1:]))
        self.size = sum(i * o + o for i, o in self.shapes)
        if theta is None:
            theta = np.zeros(self.size)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise DimensionMismatch(f"theta must have length {self.size}")
        self.theta = theta
        self.W, self.b = self._views(self.theta)

    def _views(self, flat):
        Ws, bs = [], []
        pos = 0
        for i, o in self.shapes:
            Ws.append(flat[pos:pos + i * o].reshape(i, o))
            pos += i * o
            bs.append(flat[pos:pos + o])
            pos += o
        return Ws, bs

    @property
    def n_layers(self) -> int:
        return len(self.shapes)

    def copy(self) -> "MlpParams":
        return MlpParams(self.dim, self.widths, self.theta.copy(), self.residual)

    def __repr__(self):
        return (f"MlpParams(dim={self.dim}, widths={self.widths}, "
                f"residual={self.residual}, size={self.size})")


@dataclass
class Tape:
    params: MlpParams
    X: np.ndarray
    hidden: list = field(repr=False)
    consumed: bool = False


def init(d: int, rng: np.random.Generator, widths=None, residual: bool = False,
         out_scale: float = 0.01) -> MlpParams:
    """Glorot-uniform weights, zero biases, output layer scaled by ``out_scale``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    params = MlpParams(d, default_widths(d) if widths is None else widths, residual=residual)
    for k, (fan_in, fan_out) in enumerate(params.shapes):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.W[k][...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params.W[-1] *= out_scale
    return params


def forward(params: MlpParams, X) -> tuple[np.ndarray, Tape]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise DimensionMismatch(f"expected a batch of width {params.dim}, got {X.shape}")
    h = X
    hidden = []
    for k in range(params.n_layers - 1):
        h = np.tanh(h @ params.W[k] + params.b[k])
        hidden.append(h)
    Y = h @ params.W[-1] + params.b[-1]
    if params.residual:
        Y = Y + X
    return Y, Tape(params=params, X=X, hidden=hidden)


def backward(params: MlpParams, tape: Tape, dY, need_dx: bool = True):
    """Gradients of ``sum(dY * Y)`` with respect to the flat parameters and ``X``."""
    if tape.params is not params:
        raise TapeMismatch("tape was recorded with different parameters")
    if tape.consumed:
        raise TapeMismatch("tape already consumed by a backward pass")
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != (len(tape.X), params.dim):
        raise TapeMismatch(f"upstream gradient shape {dY.shape} does not match the tape")
    tape.consumed = True

    # every weight and bias slot is written below
    grad = np.empty(params.size)
    dW, db = params._views(grad)
    inputs = [tape.X, *tape.hidden]

    last = params.n_layers - 1
    np.matmul(inputs[last].T, dY, out=dW[last])
    db[last][...] = dY.sum(axis=0)
    dh = dY @ params.W[last].T
    for k in range(last - 1, -1, -1):
        h = tape.hidden[k]
        dz = dh * (1.0 - h * h)
        np.matmul(inputs[k].T, dz, out=dW[k])
        db[k][...] = dz.sum(axis=0)
        if k > 0 or need_dx:
            dh = dz @ params.W[k].T
    dX = None
    if need_dx:
        dX = dh + dY if params.residual else dh
    return grad, dX
