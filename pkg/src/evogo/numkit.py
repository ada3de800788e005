"""Numerical substrate: Cholesky with jitter, triangular solves, seeded
streams, Latin hypercube sampling and the Adam update rule.

Everything here works on dense float64 numpy arrays.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_CAP = 1e-2
SYMMETRY_RTOL = 1e-10


def as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _try_cholesky(A: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None


def robust_cholesky(A, jitter: float = 0.0) -> tuple[np.ndarray, float]:
    """Factor ``A + jitter*I``, escalating the jitter until it succeeds.

    Escalation starts at ``1e-10 * mean(diag(A))`` (or at ``10*jitter`` when
    a larger jitter was requested) and grows by x10 per attempt. The cap is
    ``1e-2 * mean(diag(A))``.

    Returns the lower factor and the jitter that was actually added.
    """
    A = as_matrix(A)
    n, m = A.shape
    if n != m:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {A.shape}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    scale = np.abs(A).max() if n else 1.0
    if n and np.abs(A - A.T).max() > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")

    eye = np.eye(n)
    L = _try_cholesky(A + jitter * eye) if jitter > 0 else _try_cholesky(A)
    if L is not None:
        return L, jitter

    mean_diag = float(np.mean(np.diag(A))) if n else 1.0
    base = mean_diag if mean_diag > 0 else 1.0
    cap = JITTER_CAP * base
    current = max(JITTER_START * base, 10.0 * jitter)
    while current <= cap * (1 + 1e-12):
        L = _try_cholesky(A + current * eye)
        if L is not None:
            logger.debug("cholesky succeeded with jitter %.3e", current)
            return L, current
        current *= 10.0
    raise NotPositiveDefinite(
        f"matrix not positive definite even with jitter {cap:.3e}"
    )


def cholesky_factor(A, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A + used_jitter * I``."""
    return robust_cholesky(A, jitter)[0]


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return solve_triangular(L, b, lower=True, check_finite=False)


def solve_upper_t(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L.T x = b`` for lower-triangular ``L``."""
    return solve_triangular(L, b, lower=True, trans="T", check_finite=False)


def cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b``."""
    return solve_upper_t(L, solve_lower(L, b))


# ---------------------------------------------------------------------------
# seeded streams


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    ``make_rng(7, "gp", 3)`` always yields the same stream and is
    statistically independent of ``make_rng(7, "gp", 4)``. Keys may be
    nonnegative ints or strings (hashed with CRC32).
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n x d`` Latin hypercube sample on the unit cube.

    Column ``j`` has exactly one point in each stratum ``[k/n, (k+1)/n)``.
    """
    if n < 1 or d < 1:
        raise ValueError("latin_hypercube needs n >= 1 and d >= 1")
    strata = np.empty((n, d), dtype=np.int64)
    for j in range(d):
        strata[:, j] = rng.permutation(n)
    X = (strata + rng.random((n, d))) / n
    # (k + u)/n can round up into the next stratum when u is within an ulp of 1
    bad = np.floor(X * n) != strata
    while np.any(bad):
        X[bad] = np.nextafter(X[bad], -np.inf)
        bad = np.floor(X * n) != strata
    return X


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr, **kwargs)


# The bias corrections are folded into the step size and epsilon:
# lr * m_hat / (sqrt(v_hat) + eps) == lr_t * m / (sqrt(v) + eps_t).


def _adam_kernel_numpy(params, grads, m, v, b1, b2, lr_t, eps_t):
    m *= b1
    m += (1 - b1) * grads
    v *= b2
    v += (1 - b2) * grads * grads
    params -= lr_t * m / (np.sqrt(v) + eps_t)


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _adam_kernel = _adam_kernel_numpy
else:
    @numba.njit(cache=True)
    def _adam_kernel(params, grads, m, v, b1, b2, lr_t, eps_t):
        for i in range(params.shape[0]):
            g = grads[i]
            mi = b1 * m[i] + (1 - b1) * g
            vi = b2 * v[i] + (1 - b2) * g * g
            m[i] = mi
            v[i] = vi
            params[i] -= lr_t * mi / (np.sqrt(vi) + eps_t)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam step, applied to ``params`` in place.

    The elementwise update is a single fused loop (numba) because it runs
    once per mini-batch on vectors with a few hundred thousand entries.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise DimensionMismatch(
            f"adam shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}/{state.v.shape}"
        )
    if not params.flags.c_contiguous:
        raise ValueError("adam updates need a contiguous parameter array")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1**state.t, 1 - b2**state.t
    lr_t = state.lr * np.sqrt(c2) / c1
    eps_t = state.eps * np.sqrt(c2)
    flat_g = np.ascontiguousarray(grads, dtype=np.float64).reshape(-1)
    _adam_kernel(params.reshape(-1), flat_g, state.m.reshape(-1), state.v.reshape(-1),
                 b1, b2, float(lr_t), float(eps_t))
    return params
