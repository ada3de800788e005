"""Shifted numerical test functions on the normalized cube ``[0, 1]^d``.

Each function first maps ``x`` to ``w`` with a per-function affine map that
includes a random shift ``s``, then applies the classic formula. All four are
minimized with optimum value 0 (at ``w = 0`` for Ackley/Rastrigin and
``w = 1`` for Rosenbrock/Levy).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DomainError
from .numkit import make_rng

KINDS = ("ackley", "rosenbrock", "rastrigin", "levy")

# w = slope * x + offset - shift_gain * s
_AFFINE = {
    "ackley": (40.0, -20.0, 1.0),
    "rosenbrock": (20.0, -10.0, 1.0),
    "rastrigin": (64.0, -32.0, 1.0),
    "levy": (5.0, -1.5, 0.25),
}
# width of the pre-shift range of the term the shift is subtracted from
_RANGE = {"ackley": 40.0, "rosenbrock": 20.0, "rastrigin": 64.0, "levy": 20.0}

CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str
    dim: int
    shift: np.ndarray = field(compare=False)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown benchmark {self.kind!r}; expected one of {KINDS}")
        if self.dim < 2:
            raise ValueError("benchmark dimension must be >= 2")
        shift = np.asarray(self.shift, dtype=np.float64)
        if shift.shape != (self.dim,):
            raise DimensionMismatch(f"shift must have length {self.dim}")
        shift.setflags(write=False)
        object.__setattr__(self, "shift", shift)

    @property
    def slope(self) -> float:
        """Chain factor dw/dx of the affine map."""
        return _AFFINE[self.kind][0]

    @property
    def shift_scale(self) -> float:
        """Shifting by ``s`` equals translating ``x`` by ``s / shift_scale``."""
        return _RANGE[self.kind]

    def to_w(self, X: np.ndarray) -> np.ndarray:
        slope, offset, gain = _AFFINE[self.kind]
        return slope * X + offset - gain * self.shift

    def optimum(self) -> np.ndarray:
        """The minimizer in normalized coordinates."""
        slope, offset, gain = _AFFINE[self.kind]
        w_star = 0.0 if self.kind in ("ackley", "rastrigin") else 1.0
        return (w_star - offset + gain * self.shift) / slope


def make_benchmark(kind: str, dim: int, seed: int | None = 0) -> BenchmarkSpec:
    """Benchmark with shift ``s ~ U[-L/4, L/4]^d`` drawn from ``seed``.

    ``seed=None`` gives the unshifted function.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown benchmark {kind!r}; expected one of {KINDS}")
    if seed is None:
        shift = np.zeros(dim)
    else:
        half = _RANGE[kind] / 4.0
        shift = make_rng(seed, "benchmark-shift", kind).uniform(-half, half, size=dim)
    return BenchmarkSpec(kind=kind, dim=dim, shift=shift, seed=seed)


# ---------------------------------------------------------------------------
# formulas on w (rows are points)


def _ackley(W):
    d = W.shape[1]
    r = np.sqrt(np.sum(W * W, axis=1) / d)
    c = np.sum(np.cos(2 * np.pi * W), axis=1) / d
    f = -20.0 * np.exp(-0.2 * r) - np.exp(c) + 20.0 + math.e
    return np.maximum(f, 0.0)


def _ackley_grad(W):
    d = W.shape[1]
    r = np.sqrt(np.sum(W * W, axis=1) / d)
    c = np.sum(np.cos(2 * np.pi * W), axis=1) / d
    safe_r = np.where(r > 0, r, 1.0)
    g1 = (4.0 * np.exp(-0.2 * r) / (d * safe_r))[:, None] * W
    g2 = (2 * np.pi / d) * np.exp(c)[:, None] * np.sin(2 * np.pi * W)
    G = g1 + g2
    tiny = np.linalg.norm(W, axis=1) < 1e-12
    G[tiny] = 0.0
    return G


def _rosenbrock(W):
    a, b = W[:, :-1], W[:, 1:]
    return np.sum(100.0 * (b - a * a) ** 2 + (a - 1.0) ** 2, axis=1)


def _rosenbrock_grad(W):
    a, b = W[:, :-1], W[:, 1:]
    G = np.zeros_like(W)
    G[:, :-1] += -400.0 * a * (b - a * a) + 2.0 * (a - 1.0)
    G[:, 1:] += 200.0 * (b - a * a)
    return G


def _rastrigin(W):
    d = W.shape[1]
    return 10.0 * d + np.sum(W * W - 10.0 * np.cos(2 * np.pi * W), axis=1)


def _rastrigin_grad(W):
    return 2.0 * W + 20.0 * np.pi * np.sin(2 * np.pi * W)


def _levy(W):
    head = np.sin(np.pi * W[:, 0]) ** 2
    mid = W[:, :-1]
    body = np.sum((mid - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * mid + 1.0) ** 2), axis=1)
    last = W[:, -1]
    tail = (last - 1.0) ** 2 * (1.0 + np.sin(2 * np.pi * last) ** 2)
    return head + body + tail


def _levy_grad(W):
    G = np.zeros_like(W)
    G[:, 0] += np.pi * np.sin(2 * np.pi * W[:, 0])
    mid = W[:, :-1]
    arg = np.pi * mid + 1.0
    G[:, :-1] += 2.0 * (mid - 1.0) * (1.0 + 10.0 * np.sin(arg) ** 2)
    G[:, :-1] += (mid - 1.0) ** 2 * 10.0 * np.pi * np.sin(2 * arg)
    last = W[:, -1]
    G[:, -1] += 2.0 * (last - 1.0) * (1.0 + np.sin(2 * np.pi * last) ** 2)
    G[:, -1] += (last - 1.0) ** 2 * 2.0 * np.pi * np.sin(4 * np.pi * last)
    return G


_FUNCS = {
    "ackley": (_ackley, _ackley_grad),
    "rosenbrock": (_rosenbrock, _rosenbrock_grad),
    "rastrigin": (_rastrigin, _rastrigin_grad),
    "levy": (_levy, _levy_grad),
}


def _as_batch(spec: BenchmarkSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise DimensionMismatch(f"expected points of dimension {spec.dim}, got {X.shape}")
    return X


def values_unchecked(spec: BenchmarkSpec, X) -> np.ndarray:
    """Function values without the domain check; the formulas extend to all of R^d."""
    X = _as_batch(spec, X)
    return _FUNCS[spec.kind][0](spec.to_w(X))


def gradients_unchecked(spec: BenchmarkSpec, X) -> np.ndarray:
    """Row-wise gradients with respect to ``x`` without the domain check."""
    X = _as_batch(spec, X)
    return spec.slope * _FUNCS[spec.kind][1](spec.to_w(X))


def evaluate(spec: BenchmarkSpec, X) -> np.ndarray:
    """Fitness of each row of ``X`` (entries in ``[0, 1]``).

    Entries outside the cube by at most 1e-9 are clamped with a warning;
    anything further out raises :class:`DomainError`.
    """
    X = _as_batch(spec, X)
    if not np.all(np.isfinite(X)):
        raise DomainError("non-finite input")
    lo, hi = X.min(), X.max()
    if lo < 0.0 or hi > 1.0:
        if lo < -CLAMP_TOL or hi > 1.0 + CLAMP_TOL:
            raise DomainError(f"inputs outside [0, 1]: range [{lo}, {hi}]")
        warnings.warn("clamping inputs marginally outside [0, 1]", RuntimeWarning, stacklevel=2)
        X = np.clip(X, 0.0, 1.0)
    return _FUNCS[spec.kind][0](spec.to_w(X))


def gradient(spec: BenchmarkSpec, x) -> np.ndarray:
    """Analytic gradient at an interior point ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise DimensionMismatch(f"expected a point of dimension {spec.dim}")
    if not np.all((x > 0.0) & (x < 1.0)):
        raise DomainError("gradient needs a point strictly inside (0, 1)^d")
    return gradients_unchecked(spec, x)[0]


class CountingObjective:
    """Callable wrapper that counts every evaluated row."""

    def __init__(self, spec: BenchmarkSpec):
        self.spec = spec
        self.calls = 0

    def __call__(self, X) -> np.ndarray:
        y = evaluate(self.spec, X)
        self.calls += len(y)
        return y
