"""Reference optimizers run under the same evaluation accounting as EvoGO:
CMA-ES, particle swarm and uniform random search.

All of them search the unit cube and report through :class:`RunHistory`,
one row per generation (one batch of ``pop`` evaluations).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import benchmarks
from .driver import RunHistory
from .numkit import make_rng

ALGORITHMS = ("cmaes", "pso", "random")


def cmaes_default_pop(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


def _smallest_divisor_at_least(n: int, lo: int) -> int:
    for k in range(max(1, lo), n + 1):
        if n % k == 0:
            return k
    return n


@dataclass
class BaselineConfig:
    algorithm: str
    budget: int = 1000
    pop: int | None = None
    seed: int = 0
    sigma0: float = 0.3
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    vmax: float = 0.2

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if self.pop is not None:
            if self.pop < 1:
                raise ValueError("population size must be positive")
            if self.budget % self.pop:
                raise ValueError(f"budget {self.budget} is not divisible by pop {self.pop}")
        if self.sigma0 <= 0 or self.vmax <= 0:
            raise ValueError("sigma0 and vmax must be positive")

    def population(self, dim: int) -> int:
        """Explicit ``pop``, else PSO 20, random 100, and for CMA-ES the
        smallest divisor of the budget not below ``4 + floor(3 ln d)``."""
        if self.pop is not None:
            return self.pop
        if self.algorithm == "cmaes":
            return _smallest_divisor_at_least(self.budget, cmaes_default_pop(dim))
        default = 20 if self.algorithm == "pso" else 100
        return _smallest_divisor_at_least(self.budget, min(default, self.budget))


def run_baseline(config: BaselineConfig, spec: benchmarks.BenchmarkSpec) -> RunHistory:
    pop = config.population(spec.dim)
    gens = config.budget // pop
    rng = make_rng(config.seed, "baseline", config.algorithm)
    objective = benchmarks.CountingObjective(spec)
    hist = RunHistory(algorithm=config.algorithm, benchmark=spec.kind, dim=spec.dim,
                      seed=config.seed)
    started = time.perf_counter()
    step = {"cmaes": _cmaes, "pso": _pso, "random": _random}[config.algorithm]
    for X, y in step(config, spec.dim, pop, gens, rng, objective):
        hist.record(objective.calls, X, y)
    hist.wall_time = time.perf_counter() - started
    return hist


def _random(config, d, pop, gens, rng, objective):
    for _ in range(gens):
        X = rng.random((pop, d))
        yield X, objective(X)


def _pso(config, d, pop, gens, rng, objective):
    """Global-best PSO with constriction constants; positions clamped to the cube."""
    w, c1, c2, vmax = config.inertia, config.cognitive, config.social, config.vmax
    X = rng.random((pop, d))
    V = rng.uniform(-vmax, vmax, size=(pop, d))
    y = objective(X)
    P, py = X.copy(), y.copy()
    g = int(np.argmin(py))
    yield X, y
    for _ in range(gens - 1):
        r1 = rng.random((pop, d))
        r2 = rng.random((pop, d))
        V = w * V + c1 * r1 * (P - X) + c2 * r2 * (P[g] - X)
        np.clip(V, -vmax, vmax, out=V)
        X = X + V
        hit = (X < 0.0) | (X > 1.0)
        np.clip(X, 0.0, 1.0, out=X)
        V[hit] = 0.0
        y = objective(X)
        better = y < py
        P[better] = X[better]
        py[better] = y[better]
        g = int(np.argmin(py))
        yield X, y


def _cmaes(config, d, lam, gens, rng, objective):
    """(mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation and
    rank-one plus rank-mu covariance updates.

    Samples are repaired by clipping them into the cube, and the update uses
    the repaired steps, so the mean cannot drift outside the domain where
    every sample would evaluate to the same boundary point.
    """
    mu = lam // 2
    weights = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights**2)

    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    cs = (mueff + 2) / (d + mueff + 5)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    mean = rng.random(d)
    sigma = config.sigma0
    C = np.eye(d)
    B = np.eye(d)
    D = np.ones(d)
    pc = np.zeros(d)
    ps = np.zeros(d)

    for gen in range(gens):
        Z = rng.standard_normal((lam, d))
        Y = (Z * D) @ B.T
        X = mean + sigma * Y
        Xe = np.clip(X, 0.0, 1.0)
        f = objective(Xe)
        yield Xe, f
        Y = (Xe - mean) / sigma

        order = np.argsort(f, kind="stable")[:mu]
        y_w = weights @ Y[order]
        mean = mean + sigma * y_w

        c_inv_sqrt = (B / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (c_inv_sqrt @ y_w)
        norm_ps = float(np.linalg.norm(ps))
        hsig = norm_ps / math.sqrt(1 - (1 - cs) ** (2 * (gen + 1))) / chi_n < 1.4 + 2 / (d + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w

        Ysel = Y[order]
        rank_mu = (Ysel * weights[:, None]).T @ Ysel
        C = ((1 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= math.exp((cs / damps) * (norm_ps / chi_n - 1))
        # keep the step size meaningful inside the unit cube
        sigma = min(sigma, 1.0)

        C = np.triu(C) + np.triu(C, 1).T
        evals, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(evals, 1e-30))
