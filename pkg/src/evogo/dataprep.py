"""Training-set construction for the surrogate and the generator pair,
and the survivor rule applied after each generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySplit


@dataclass
class Dataset:
    """Solutions ``X`` with fitness ``y``.

    ``gen`` tags the generation each row was evaluated in and ``augmented``
    marks synthetic rows whose fitness is a surrogate prediction.
    """

    X: np.ndarray
    y: np.ndarray
    gen: np.ndarray
    augmented: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        n = len(self.y)
        self.gen = np.broadcast_to(np.asarray(self.gen, dtype=np.int64), (n,)).copy()
        self.augmented = np.broadcast_to(np.asarray(self.augmented, dtype=bool), (n,)).copy()
        if len(self.X) != n:
            raise DimensionMismatch("X and y rows are not aligned")

    @classmethod
    def from_evaluations(cls, X, y, gen: int = 0) -> "Dataset":
        return cls(X, y, gen, False)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0), np.empty(0, dtype=np.int64),
                   np.empty(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.gen[idx], self.augmented[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        if len(self) and len(other) and self.dim != other.dim:
            raise DimensionMismatch("datasets have different dimensions")
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]),
                       np.concatenate([self.gen, other.gen]),
                       np.concatenate([self.augmented, other.augmented]))

    def evaluated(self) -> "Dataset":
        return self.take(np.flatnonzero(~self.augmented))

    def best_index(self) -> int:
        return int(np.argmin(self.y))


@dataclass
class PairedDataset:
    """Every (inferior, superior) combination of two row sets.

    Pair ``k`` couples ``inferior[k // n_sup]`` (the source ``p``) with
    ``superior[k % n_sup]`` (the target ``q``).
    """

    inferior: Dataset
    superior: Dataset

    def __len__(self) -> int:
        return len(self.inferior) * len(self.superior)

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        ni, ns = len(self.inferior), len(self.superior)
        return np.repeat(np.arange(ni), ns), np.tile(np.arange(ns), ni)

    def pairs(self):
        for i, j in zip(*self.pair_indices()):
            yield ((self.inferior.X[i], self.inferior.y[i]),
                   (self.superior.X[j], self.superior.y[j]))


@dataclass(frozen=True)
class AugmentSpec:
    threshold: int = 64
    factor: float = 1.0


def _ceil_fraction(frac: float, n: int) -> int:
    # 0.3 * 10 is 3.0000000000000004 in floating point
    return max(1, math.ceil(frac * n - 1e-9))


def select_training_set(history: Dataset, init_size: int, eps_win: float):
    """Elite selection plus the sliding window.

    Returns ``(D_SM, n_elite)``; the first ``n_elite`` rows of ``D_SM`` are the
    elites ``D'`` and the remainder are window rows from the previous
    generation.
    """
    if len(history) == 0:
        raise ValueError("history is empty")
    if eps_win < 0:
        raise ValueError("eps_win must be nonnegative")
    order = np.argsort(history.y, kind="stable")
    elite = order[:init_size]

    t = int(history.gen.max())
    cur = history.gen == t
    prev = history.gen == t - 1
    chosen = np.zeros(len(history), dtype=bool)
    chosen[elite] = True
    y_cur = history.y[cur]
    bound = y_cur.max() + eps_win * y_cur.std()
    window = np.flatnonzero(prev & ~chosen & (history.y <= bound))
    return history.take(np.concatenate([elite, window])), len(elite)


def augment_elites(elites: Dataset, spec: AugmentSpec, surrogate, rng: np.random.Generator,
                   gen: int) -> Dataset:
    """Synthetic rows drawn from a diagonal Gaussian moment-matched to the
    elites, clipped to the cube and scored by the surrogate mean."""
    from .gp import predict

    count = int(round(spec.factor * len(elites)))
    if count == 0:
        return Dataset.empty(elites.dim)
    mean = elites.X.mean(axis=0)
    sd = elites.X.std(axis=0)
    X = np.clip(rng.normal(mean, sd, size=(count, elites.dim)), 0.0, 1.0)
    y, _ = predict(surrogate, X)
    return Dataset(X, y, gen, True)


def prepare(history: Dataset, init_size: int, eta: float, eps_win: float,
            augment: AugmentSpec | None = None, surrogate_hint=None,
            rng: np.random.Generator | None = None, gp_epochs: int = 1000):
    """Build ``(D_SM, D_GM)`` from the evaluated history.

    Augmentation runs only when ``augment`` is given and there are fewer
    elites than ``augment.threshold``. Its rows enlarge the pairing pool; GP
    training must use ``D_SM.evaluated()``. When no ``surrogate_hint`` is
    supplied for augmentation, a GP is fitted on the evaluated rows of
    ``D_SM``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    d_sm, n_elite = select_training_set(history, init_size, eps_win)

    if augment is not None and n_elite < augment.threshold:
        if surrogate_hint is None:
            from .gp import fit
            surrogate_hint = fit(d_sm.X, d_sm.y, epochs=gp_epochs)
        if rng is None:
            raise ValueError("augmentation needs an rng")
        extra = augment_elites(d_sm.take(np.arange(n_elite)), augment, surrogate_hint, rng,
                               int(history.gen.max()))
        d_sm = (d_sm.take(np.arange(n_elite)).concat(extra)
                .concat(d_sm.take(np.arange(n_elite, len(d_sm)))))
        n_elite += len(extra)

    n_plus = _ceil_fraction(eta, n_elite)
    elite_order = np.argsort(d_sm.y[:n_elite], kind="stable")
    plus = np.sort(elite_order[:n_plus])
    minus = np.setdiff1d(np.arange(len(d_sm)), plus)
    if len(plus) == 0 or len(minus) == 0:
        raise EmptySplit(f"split produced {len(plus)} superior and {len(minus)} inferior rows")
    return d_sm, PairedDataset(inferior=d_sm.take(minus), superior=d_sm.take(plus))


def median_merge(current: Dataset, offspring: Dataset) -> Dataset:
    """Rows of ``current`` and ``offspring`` strictly better than the pooled
    median, sorted by fitness. Falls back to the single best row."""
    if len(current) and len(offspring) and current.dim != offspring.dim:
        raise DimensionMismatch("datasets have different dimensions")
    pool = current.concat(offspring)
    keep = np.flatnonzero(pool.y < np.median(pool.y))
    if len(keep) == 0:
        keep = np.array([pool.best_index()])
    keep = keep[np.argsort(pool.y[keep], kind="stable")]
    return pool.take(keep)
