"""The EvoGO generational loop.

Generation 1 evaluates a Latin hypercube sample of ``pop`` points. Every
later generation prepares training data from the evaluated history, fits
the GP, trains the generator pair against it, maps the working population
through the forward generator, evaluates the result and merges survivors.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import benchmarks, genpair, gp
from .dataprep import AugmentSpec, Dataset, median_merge, prepare, select_training_set
from .errors import NotPositiveDefinite
from .numkit import JITTER_CAP, latin_hypercube, make_rng

logger = logging.getLogger(__name__)

BATCHINGS = ("blocks", "pairs")


@dataclass
class EvoGoConfig:
    benchmark: benchmarks.BenchmarkSpec
    pop: int = 100
    gens: int = 10
    eta: float = 0.1
    eps_win: float = 0.3
    lam: float = 0.1
    lam1: float = 400.0
    lam2: float = 10.0
    corr_sign: float = -1.0
    gp_epochs: int = 1000
    gen_epochs: int = 200
    variant: str = "kg"
    ablation: str = "none"
    augment: AugmentSpec | None = field(default_factory=AugmentSpec)
    seed: int = 0
    fe_budget: int | None = None
    warm_start: bool = True
    batching: str = "blocks"
    keep_snapshots: bool = True
    residual: bool = False
    units: str = "standardized"

    def __post_init__(self):
        if self.pop < 2:
            raise ValueError("population size must be at least 2")
        if self.gens < 1:
            raise ValueError("need at least one generation")
        if self.fe_budget is not None and self.fe_budget != self.pop * self.gens:
            raise ValueError(f"fe_budget {self.fe_budget} != pop * gens = {self.pop * self.gens}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.eps_win < 0:
            raise ValueError("eps_win must be nonnegative")
        if self.gp_epochs < 0 or self.gen_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.variant not in genpair.VARIANTS:
            raise ValueError(f"variant must be one of {genpair.VARIANTS}")
        if self.ablation not in genpair.ABLATIONS:
            raise ValueError(f"ablation must be one of {genpair.ABLATIONS}")
        if self.units not in genpair.UNITS:
            raise ValueError(f"units must be one of {genpair.UNITS}")
        if self.batching not in BATCHINGS:
            raise ValueError(f"batching must be one of {BATCHINGS}")
        # validates the sign and the weights
        self.weights

    @property
    def weights(self) -> genpair.LossWeights:
        return genpair.LossWeights(self.lam, self.lam1, self.lam2, self.corr_sign)

    @property
    def budget(self) -> int:
        return self.pop * self.gens

    @classmethod
    def from_budget(cls, benchmark, fe_budget: int, gens: int = 10, **kwargs) -> "EvoGoConfig":
        if fe_budget % gens:
            raise ValueError(f"budget {fe_budget} is not a multiple of {gens} generations")
        return cls(benchmark=benchmark, pop=fe_budget // gens, gens=gens, fe_budget=fe_budget,
                   **kwargs)


@dataclass
class Snapshot:
    """Working population fed to the generator and what it produced."""

    x_in: np.ndarray
    x_out: np.ndarray


@dataclass
class RunHistory:
    """Per-generation convergence record shared by EvoGO and the baselines.

    Generation numbers start at 1. ``snapshots`` and ``loss_traces`` are
    keyed by generation and only exist for generations that trained a
    generator.
    """

    algorithm: str
    benchmark: str
    dim: int
    seed: int
    generation: list = field(default_factory=list)
    fe_count: list = field(default_factory=list)
    gen_best: list = field(default_factory=list)
    best_so_far: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict, repr=False)
    loss_traces: dict = field(default_factory=dict, repr=False)
    best_x: np.ndarray | None = None
    best_y: float = math.inf
    status: str = "ok"
    wall_time: float = 0.0

    def record(self, fe_count: int, X: np.ndarray, y: np.ndarray):
        i = int(np.argmin(y))
        if y[i] < self.best_y:
            self.best_y = float(y[i])
            self.best_x = np.array(X[i], dtype=np.float64)
        self.generation.append(len(self.generation) + 1)
        self.fe_count.append(int(fe_count))
        self.gen_best.append(float(y[i]))
        self.best_so_far.append(self.best_y)

    @property
    def n_generations(self) -> int:
        return len(self.generation)

    @property
    def final_best(self) -> float:
        return self.best_so_far[-1] if self.best_so_far else math.inf

    def rows(self):
        for g, fe, gb, bsf in zip(self.generation, self.fe_count, self.gen_best, self.best_so_far):
            yield g, fe, gb, bsf


def generate_population(pair: genpair.GenerativePair, current: Dataset) -> np.ndarray:
    """Apply the forward generator to every row and clamp into the unit cube."""
    return np.clip(pair.generate(current.X), 0.0, 1.0)


def _fit_surrogate(X, y, epochs: int) -> gp.GpModel:
    """GP fit with one retry at a heavier diagonal loading."""
    try:
        return gp.fit(X, y, epochs=epochs)
    except NotPositiveDefinite:
        # the model works on standardized targets, so the prior variance is O(1)
        jitter = 2.0 * JITTER_CAP
        logger.warning("GP factorization failed; retrying with jitter %.3g", jitter)
        return gp.fit(X, y, epochs=epochs, jitter=jitter)


def _fill_population(merged: Dataset, pool: Dataset, size: int) -> Dataset:
    """Top up ``merged`` with the best unused rows of ``pool``.

    Ties at the median can leave fewer than ``size`` survivors; the loop
    needs a fixed population size to keep the evaluation count exact.
    """
    if len(merged) >= size:
        return merged.take(np.arange(size))
    taken = {row.tobytes() for row in merged.X}
    extra = []
    for i in np.argsort(pool.y, kind="stable"):
        key = pool.X[i].tobytes()
        if key in taken:
            continue
        taken.add(key)
        extra.append(i)
        if len(merged) + len(extra) == size:
            break
    out = merged.concat(pool.take(extra)) if extra else merged
    if len(out) < size:
        # not enough distinct rows: repeat from the best
        reps = np.resize(np.arange(len(out)), size - len(out))
        out = out.concat(out.take(reps))
    return out


def run(config: EvoGoConfig) -> RunHistory:
    """One complete EvoGO run; exactly ``pop * gens`` evaluations."""
    spec = config.benchmark
    d = spec.dim
    n = config.pop
    started = time.perf_counter()
    objective = benchmarks.CountingObjective(spec)
    hist = RunHistory(algorithm=label(config.variant, config.ablation), benchmark=spec.kind, dim=d, seed=config.seed)

    X0 = latin_hypercube(n, d, make_rng(config.seed, "lhs"))
    y0 = objective(X0)
    archive = Dataset(X0, y0, 1, False)
    current = archive
    hist.record(objective.calls, X0, y0)

    pair = None
    for g in range(2, config.gens + 1):
        d_sm, _ = select_training_set(archive, n, config.eps_win)
        train_rows = d_sm.evaluated()
        try:
            model = _fit_surrogate(train_rows.X, train_rows.y, config.gp_epochs)
        except NotPositiveDefinite as exc:
            hist.status = f"aborted: {exc}"
            logger.error("run %s seed %d aborted at generation %d: %s",
                         hist.algorithm, config.seed, g, exc)
            break
        _, data = prepare(archive, n, config.eta, config.eps_win, augment=config.augment,
                          surrogate_hint=model, rng=make_rng(config.seed, "augment", g))

        if pair is None or not config.warm_start:
            pair = genpair.new_pair(d, make_rng(config.seed, "init", g), config.weights,
                                    config.variant, config.ablation,
                                    residual=config.residual, units=config.units)
        head = model
        if config.variant == "realeval":
            head = genpair.TrueObjective(spec, model.y_mean, model.y_std)
        _, trace = genpair.train(pair, head, data, epochs=config.gen_epochs,
                                 batch_size=len(current), rng=make_rng(config.seed, "train", g),
                                 batching=config.batching)

        X_new = generate_population(pair, current)
        y_new = objective(X_new)
        logger.debug(
            "gen %d: |D_SM|=%d pairs=%d gp=%s loss %.4g->%.4g step=%.3g spread=%.3g best=%.4g",
            g, len(data.inferior) + len(data.superior), len(data), model.params,
            trace[0] if trace else float("nan"), trace[-1] if trace else float("nan"),
            float(np.mean(np.linalg.norm(X_new - current.X, axis=1))),
            float(np.mean(np.std(X_new, axis=0))), float(np.min(y_new)))
        offspring = Dataset(X_new, y_new, g, False)
        if config.keep_snapshots:
            hist.snapshots[g] = Snapshot(current.X.copy(), X_new.copy())
        hist.loss_traces[g] = np.asarray(trace)
        archive = archive.concat(offspring)
        pool = current.concat(offspring)
        current = _fill_population(median_merge(current, offspring), pool, n)
        hist.record(objective.calls, X_new, y_new)

    hist.wall_time = time.perf_counter() - started
    return hist


def label(variant: str = "kg", ablation: str = "none") -> str:
    """Algorithm name used in result files, e.g. ``evogo-lcb``."""
    if ablation == "singlenet":
        return "evogo-singlenet"
    return "evogo" if variant == "kg" else f"evogo-{variant}"
