"""Gaussian-process surrogate with a noisy Matern-5/2 kernel.

Targets are standardized before fitting; the public functions
(:func:`posterior`, :func:`predict`, :func:`posterior_grads`) report values in
the original fitness units. The ``*_std`` methods on :class:`GpModel` work in
standardized units and are what the generator loss consumes.

The kernel is isotropic,

    k(a, b) = s2 * (1 + sqrt5*r + 5/3*r^2) * exp(-sqrt5*r),  r = |a - b| / ell,

plus ``noise`` on the diagonal of any Gram matrix built from one point set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotri

from .errors import DegenerateTargets, DimensionMismatch, NotPositiveDefinite
from .numkit import AdamState, adam_step, cho_solve, robust_cholesky, solve_lower

SQRT5 = math.sqrt(5.0)
NU = 2.5
VAR_FLOOR = 1e-12

# keeps Adam from walking the hyperparameters somewhere numerically hopeless
_LOG_BOUNDS = np.array([
    [math.log(1e-4), math.log(1e4)],    # signal variance
    [math.log(1e-3), math.log(1e3)],    # lengthscale
    [math.log(1e-10), math.log(10.0)],  # noise
])


@dataclass(frozen=True)
class KernelParams:
    log_scale: float = 0.0
    log_lengthscale: float = math.log(0.5)
    log_noise: float = math.log(1e-4)

    nu = NU  # fixed smoothness, not trainable

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def noise(self) -> float:
        return math.exp(self.log_noise)

    def as_array(self) -> np.ndarray:
        return np.array([self.log_scale, self.log_lengthscale, self.log_noise])

    @classmethod
    def from_array(cls, a) -> "KernelParams":
        return cls(float(a[0]), float(a[1]), float(a[2]))


def _dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.sqrt(np.maximum(sq, 0.0))


def matern52(A, B, params: KernelParams) -> np.ndarray:
    """Noise-free cross-covariance ``k(A, B)``."""
    s = _dist(np.atleast_2d(A), np.atleast_2d(B)) / params.lengthscale
    return params.scale * (1.0 + SQRT5 * s + (5.0 / 3.0) * s * s) * np.exp(-SQRT5 * s)


def gram(X, params: KernelParams) -> np.ndarray:
    X = np.atleast_2d(X)
    return matern52(X, X, params) + params.noise * np.eye(len(X))


def _kernel_and_slope(A, B, params: KernelParams):
    """``k(A, B)`` and ``g`` with ``d k(a_i, b_j) / d a_i = g_ij * (a_i - b_j)``."""
    s = _dist(A, B) / params.lengthscale
    e = np.exp(-SQRT5 * s)
    K = params.scale * (1.0 + SQRT5 * s + (5.0 / 3.0) * s * s) * e
    G = -params.scale * (5.0 / (3.0 * params.lengthscale**2)) * (1.0 + SQRT5 * s) * e
    return K, G


def _contract(U, X, M):
    """Row ``i`` of the result is ``sum_n M[i, n] * (U[i] - X[n])``."""
    return M.sum(axis=1)[:, None] * U - M @ X


def _mll_and_grad(X, y, params: KernelParams, D=None, jitter: float = 0.0):
    n = len(X)
    if D is None:
        D = _dist(X, X)
    s = D / params.lengthscale
    e = np.exp(-SQRT5 * s)
    Km = params.scale * (1.0 + SQRT5 * s + (5.0 / 3.0) * s * s) * e
    K = Km + params.noise * np.eye(n)
    L, _ = robust_cholesky(K, jitter)
    alpha = cho_solve(L, y)
    mll = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"potri failed with info={info}")
    # potri fills only the lower triangle
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    dK_scale = Km
    dK_ell = params.scale * (5.0 / 3.0) * s * s * (1.0 + SQRT5 * s) * e
    grad = 0.5 * np.array([
        np.sum(W * dK_scale),
        np.sum(W * dK_ell),
        params.noise * np.trace(W),
    ])
    return mll, grad


def marginal_log_likelihood(X, y, params: KernelParams) -> float:
    """Exact log marginal likelihood of (standardized) targets ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(_mll_and_grad(X, np.asarray(y, dtype=np.float64), params)[0])


@dataclass
class GpModel:
    X: np.ndarray
    y: np.ndarray  # standardized targets
    y_mean: float
    y_std: float
    params: KernelParams
    L: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    degenerate: bool = False
    mll_trace: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def prior_var_std(self) -> float:
        return self.params.scale + self.params.noise

    # -- standardized-unit queries -------------------------------------------

    def _check(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        if U.shape[1] != self.dim:
            raise DimensionMismatch(f"queries must have dimension {self.dim}")
        return U

    def mean_std(self, U, grad: bool = False):
        U = self._check(U)
        if self.degenerate:
            mu = np.zeros(len(U))
            return (mu, np.zeros_like(U)) if grad else mu
        K, G = _kernel_and_slope(U, self.X, self.params)
        mu = K @ self.alpha
        if not grad:
            return mu
        return mu, _contract(U, self.X, G * self.alpha[None, :])

    def std_std(self, U, grad: bool = False):
        """Posterior standard deviation (noise included) and its gradient."""
        U = self._check(U)
        prior = self.prior_var_std
        if self.degenerate:
            sd = np.full(len(U), math.sqrt(prior))
            return (sd, np.zeros_like(U)) if grad else sd
        K, G = _kernel_and_slope(U, self.X, self.params)
        Wu = cho_solve(self.L, K.T).T
        var = prior - np.sum(K * Wu, axis=1)
        ok = var > VAR_FLOOR
        sd = np.sqrt(np.where(ok, var, VAR_FLOOR))
        if not grad:
            return sd
        dvar = -2.0 * _contract(U, self.X, G * Wu)
        dsd = np.where(ok[:, None], dvar / (2.0 * sd[:, None]), 0.0)
        return sd, dsd

    def latent_cov_pairs(self, U, V):
        """Noise-free posterior covariance between every ``U_i`` and ``V_j``,
        plus the two noise-free marginal variances."""
        Ku = matern52(U, self.X, self.params)
        Kv = matern52(V, self.X, self.params)
        Bv = cho_solve(self.L, Kv.T)
        Bu = cho_solve(self.L, Ku.T)
        cross = matern52(U, V, self.params) - Ku @ Bv
        vu = self.params.scale - np.sum(Ku * Bu.T, axis=1)
        vv = self.params.scale - np.sum(Kv * Bv.T, axis=1)
        return cross, vu, vv

    def correlation_vjp(self, U, V, weights):
        """Latent correlation matrix ``rho[i, j] = rho(U_i, V_j)`` and the
        gradient of ``sum(weights * rho)`` with respect to ``U``.

        Entries whose variance is below the floor are set to 0 with zero
        gradient.
        """
        U = self._check(U)
        V = self._check(V)
        weights = np.asarray(weights, dtype=np.float64)
        if self.degenerate:
            K, G = _kernel_and_slope(U, V, self.params)
            rho = K / self.params.scale
            dU = _contract(U, V, weights * G / self.params.scale)
            return rho, dU
        Ku, Gu = _kernel_and_slope(U, self.X, self.params)
        Kv = matern52(V, self.X, self.params)
        Kuv, Guv = _kernel_and_slope(U, V, self.params)
        Bv = cho_solve(self.L, Kv.T)            # n x p
        Wu = cho_solve(self.L, Ku.T).T          # m x n
        cross = Kuv - Ku @ Bv
        vu = self.params.scale - np.sum(Ku * Wu, axis=1)
        vv = self.params.scale - np.sum(Kv * Bv.T, axis=1)
        ok_u = vu > VAR_FLOOR
        ok_v = vv > VAR_FLOOR
        mask = ok_u[:, None] & ok_v[None, :]
        denom = np.sqrt(np.where(ok_u, vu, 1.0)[:, None] * np.where(ok_v, vv, 1.0)[None, :])
        rho = np.where(mask, cross / denom, 0.0)

        H = np.where(mask, weights / denom, 0.0)
        dU = _contract(U, V, H * Guv)
        dU -= _contract(U, self.X, Gu * (H @ Bv.T))
        c = np.where(ok_u, -0.5 * np.sum(np.where(mask, weights * rho, 0.0), axis=1)
                     / np.where(ok_u, vu, 1.0), 0.0)
        dU += c[:, None] * (-2.0 * _contract(U, self.X, Gu * Wu))
        return rho, dU


def from_params(X, y, params: KernelParams, y_mean: float | None = None,
                y_std: float | None = None) -> GpModel:
    """Condition a GP on ``(X, y)`` with fixed hyperparameters (no training).

    ``y_mean``/``y_std`` default to the sample statistics of ``y``; pass them
    explicitly to condition on fewer than two points.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) != len(y):
        raise DimensionMismatch("X and y have different lengths")
    if y_mean is None:
        y_mean = float(np.mean(y))
    if y_std is None:
        y_std = float(np.std(y))
    if y_std < 1e-12:
        raise ValueError("y_std must be positive; use fit() for constant targets")
    ys = (y - y_mean) / y_std
    L, jitter = robust_cholesky(gram(X, params))
    alpha = cho_solve(L, ys)
    return GpModel(X=X, y=ys, y_mean=float(y_mean), y_std=float(y_std), params=params,
                   L=L, alpha=alpha, jitter=jitter)


def fit(X, y, epochs: int = 1000, rng: np.random.Generator | None = None,
        lr: float | None = None, init: KernelParams | None = None,
        jitter: float = 0.0) -> GpModel:
    """Fit kernel hyperparameters by maximizing the marginal log likelihood.

    Adam runs for ``epochs`` full-batch steps at learning rate ``n / 6e4``
    unless ``lr`` is given. Constant targets produce a constant model and a
    :class:`DegenerateTargets` warning.

    ``jitter`` is the first diagonal loading tried by every factorization.
    ``rng`` is accepted for interface symmetry; exact MLL training draws no
    random numbers, so the result is a pure function of the data.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if n < 2:
        raise ValueError("GP fit needs at least two points")
    if len(X) != n:
        raise DimensionMismatch("X and y have different lengths")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    params = init or KernelParams()

    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std < 1e-12:
        warnings.warn("constant GP targets; returning a constant model",
                      DegenerateTargets, stacklevel=2)
        return GpModel(X=X, y=np.zeros(n), y_mean=y_mean, y_std=1.0, params=params,
                       L=np.eye(n), alpha=np.zeros(n), degenerate=True)
    ys = (y - y_mean) / y_std

    theta = params.as_array()
    state = AdamState.zeros(3, lr=n / 6e4 if lr is None else lr)
    trace = []
    D = _dist(X, X)
    for _ in range(epochs):
        mll, g = _mll_and_grad(X, ys, KernelParams.from_array(theta), D, jitter)
        trace.append(float(mll))
        adam_step(theta, -g, state)
        np.clip(theta, _LOG_BOUNDS[:, 0], _LOG_BOUNDS[:, 1], out=theta)

    params = KernelParams.from_array(theta)
    L, jitter = robust_cholesky(gram(X, params), jitter)
    alpha = cho_solve(L, ys)
    trace.append(float(_mll_and_grad(X, ys, params, D, jitter)[0]))
    return GpModel(X=X, y=ys, y_mean=y_mean, y_std=y_std, params=params, L=L,
                   alpha=alpha, jitter=jitter, mll_trace=trace)


# ---------------------------------------------------------------------------
# public queries in fitness units


def posterior(model: GpModel, Q):
    """Posterior mean vector and covariance matrix at the rows of ``Q``."""
    Q = model._check(Q)
    p = model.params
    kqq = matern52(Q, Q, p) + p.noise * np.eye(len(Q))
    if model.degenerate:
        mean = np.full(len(Q), model.y_mean)
        return mean, kqq * model.y_std**2
    Kq = matern52(Q, model.X, p)
    mean = Kq @ model.alpha
    V = solve_lower(model.L, Kq.T)
    cov = kqq - V.T @ V
    cov = 0.5 * (cov + cov.T)
    di = np.diag_indices_from(cov)
    cov[di] = np.maximum(cov[di], 0.0)
    return model.y_mean + model.y_std * mean, cov * model.y_std**2


def predict(model: GpModel, Q):
    """Posterior mean and marginal variance (diagonal only)."""
    mu = model.mean_std(Q)
    sd = model.std_std(Q)
    return model.y_mean + model.y_std * mu, (model.y_std * sd) ** 2


def correlation(model: GpModel, x1, x2, return_flag: bool = False):
    """Posterior correlation of the latent function at two points.

    Uses the noise-free posterior covariance, so ``correlation(m, x, x) == 1``.
    When either variance is below 1e-12 the result is 0 and the flag is False.
    """
    U = model._check(x1)
    V = model._check(x2)
    # canonical argument order makes the result exactly symmetric
    if tuple(U[0]) > tuple(V[0]):
        U, V = V, U
    if model.degenerate:
        rho = float(matern52(U, V, model.params)[0, 0] / model.params.scale)
        return (rho, True) if return_flag else rho
    cross, vu, vv = model.latent_cov_pairs(U, V)
    if vu[0] < VAR_FLOOR or vv[0] < VAR_FLOOR:
        return (0.0, False) if return_flag else 0.0
    if np.array_equal(U, V):
        rho = 1.0
    else:
        rho = float(np.clip(cross[0, 0] / math.sqrt(vu[0] * vv[0]), -1.0, 1.0))
    return (rho, True) if return_flag else rho


def posterior_grads(model: GpModel, q):
    """Gradients of the posterior mean and standard deviation at ``q``."""
    q = model._check(q)
    _, dmu = model.mean_std(q, grad=True)
    _, dsd = model.std_std(q, grad=True)
    return model.y_std * dmu[0], model.y_std * dsd[0]
