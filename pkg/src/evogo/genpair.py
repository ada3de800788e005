"""Paired generator training: a forward map ``gamma`` (inferior -> superior)
and a pseudo-inverse ``gamma'`` trained against a frozen surrogate.

Loss per pair ``(p, q)``::

    L_sim = |gamma(p) - q|^2 + |gamma'(q) - p|^2
    L_rec = |gamma'(gamma(p)) - p|^2 + |gamma(gamma'(q)) - q|^2
    L_opt = mu(gamma(p)) - y_p + lam2 * sigma(gamma(p))
            + corr_sign * lam2 * (rho(gamma'(gamma(p)), q) + rho(gamma(gamma'(q)), p))
    L     = L_sim + lam1 * L_rec + lam * L_opt

averaged over the pairs of a batch. ``mu``, ``sigma`` and ``y_p`` are in the
surrogate's standardized units by default; with ``units="fitness"`` the mean
and std terms are multiplied back by the target scale. ``rho`` is the latent
posterior correlation.
The ``lcb`` variant drops the correlation terms, ``realeval`` replaces the
surrogate by the true function (mean term only), and the ``singlenet``
ablation keeps only ``|gamma(p) - q|^2 + lam * (mu(gamma(p)) - y_p)``.

Networks are evaluated once per distinct input row of a batch and the
pair terms are gathered from those outputs, so repeated ``p`` or ``q`` rows
cost nothing extra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import benchmarks, diffnet
from .dataprep import PairedDataset
from .errors import EmptyData, FrozenModelMissing
from .gp import GpModel
from .numkit import AdamState, adam_step

VARIANTS = ("kg", "lcb", "realeval")
ABLATIONS = ("none", "singlenet")
UNITS = ("standardized", "fitness")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.1
    lam1: float = 400.0
    lam2: float = 10.0
    corr_sign: float = -1.0

    def __post_init__(self):
        if self.lam < 0 or self.lam1 < 0:
            raise ValueError("lam and lam1 must be nonnegative")
        if self.corr_sign not in (-1.0, 1.0):
            raise ValueError("corr_sign must be +1 or -1")


@dataclass
class TrueObjective:
    """The real benchmark standing in for the surrogate; values are
    standardized with ``(f - y_mean) / y_std`` like the GP's."""

    spec: benchmarks.BenchmarkSpec
    y_mean: float = 0.0
    y_std: float = 1.0

    def mean_std(self, U, grad: bool = False):
        f = (benchmarks.values_unchecked(self.spec, U) - self.y_mean) / self.y_std
        if not grad:
            return f
        return f, benchmarks.gradients_unchecked(self.spec, U) / self.y_std


@dataclass
class GenerativePair:
    fwd: diffnet.MlpParams
    inv: diffnet.MlpParams | None
    weights: LossWeights = field(default_factory=LossWeights)
    variant: str = "kg"
    ablation: str = "none"
    adam_fwd: AdamState | None = None
    adam_inv: AdamState | None = None
    units: str = "standardized"

    def __post_init__(self):
        if self.units not in UNITS:
            raise ValueError(f"units must be one of {UNITS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.ablation == "singlenet":
            self.inv = None
        elif self.inv is None:
            raise ValueError("paired model needs an inverse network")
        elif self.inv.shapes != self.fwd.shapes:
            raise ValueError("forward and inverse networks must share an architecture")

    @property
    def single(self) -> bool:
        return self.ablation == "singlenet"

    def generate(self, X) -> np.ndarray:
        return diffnet.forward(self.fwd, X)[0]

    def copy(self) -> "GenerativePair":
        return GenerativePair(self.fwd.copy(), None if self.inv is None else self.inv.copy(),
                              self.weights, self.variant, self.ablation, units=self.units)


def new_pair(d: int, rng: np.random.Generator, weights: LossWeights | None = None,
             variant: str = "kg", ablation: str = "none", widths=None,
             out_scale: float = 0.01, residual: bool = True,
             units: str = "standardized") -> GenerativePair:
    """Fresh generator pair. With ``residual`` (the default) both maps start
    as small perturbations of the identity; otherwise they start near 0."""
    fwd = diffnet.init(d, rng, widths=widths, residual=residual, out_scale=out_scale)
    inv = None
    if ablation != "singlenet":
        inv = diffnet.init(d, rng, widths=widths, residual=residual, out_scale=out_scale)
    return GenerativePair(fwd, inv, weights or LossWeights(), variant, ablation, units=units)


@dataclass
class Batch:
    """Distinct source rows ``P``, target rows ``Q`` and the pairs
    ``(P[I[k]], Q[J[k]])`` that the loss averages over."""

    P: np.ndarray
    yP: np.ndarray
    Q: np.ndarray
    yQ: np.ndarray
    I: np.ndarray
    J: np.ndarray

    def __len__(self) -> int:
        return len(self.I)

    @classmethod
    def full(cls, data: PairedDataset) -> "Batch":
        I, J = data.pair_indices()
        return cls(data.inferior.X, data.inferior.y, data.superior.X, data.superior.y, I, J)

    @classmethod
    def from_pairs(cls, data: PairedDataset, I, J) -> "Batch":
        ui, I = np.unique(I, return_inverse=True)
        uj, J = np.unique(J, return_inverse=True)
        return cls(data.inferior.X[ui], data.inferior.y[ui],
                   data.superior.X[uj], data.superior.y[uj], I, J)


@dataclass
class LossValue:
    total: float
    sim: float
    rec: float
    gen: float
    opt: float
    d_fwd: np.ndarray
    d_inv: np.ndarray | None


def _scatter(idx, values, n):
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, idx, values)
    return out


def _head_y(head, y):
    return (y - head.y_mean) / head.y_std


def loss(pair: GenerativePair, head, batch) -> LossValue:
    """Composite loss of one batch and its gradients for both networks."""
    if isinstance(batch, PairedDataset):
        batch = Batch.full(batch)
    M = len(batch)
    if M == 0:
        raise EmptyData("empty batch")
    needs_gp = pair.variant in ("kg", "lcb")
    if needs_gp and not isinstance(head, GpModel):
        raise FrozenModelMissing(f"variant {pair.variant!r} needs a fitted GpModel")
    if pair.variant == "realeval" and not isinstance(head, (TrueObjective, GpModel)):
        raise FrozenModelMissing("realeval needs a TrueObjective")

    w = pair.weights
    P, Q, I, J = batch.P, batch.Q, batch.I, batch.J
    bp, bq = len(P), len(Q)
    cnt_p = np.bincount(I, minlength=bp) / M
    cnt_q = np.bincount(J, minlength=bq) / M
    ys_p = _head_y(head, batch.yP)
    # scale of the mean and std terms: 1 keeps the surrogate's standardized units
    u = head.y_std if pair.units == "fitness" else 1.0

    if pair.single:
        A, tape_a = diffnet.forward(pair.fwd, P)
        d1 = A[I] - Q[J]
        sim = float(np.sum(d1 * d1)) / M
        dA = _scatter(I, 2.0 * d1 / M, bp)
        mu, dmu = head.mean_std(A, grad=True)
        opt = u * float(cnt_p @ (mu - ys_p))
        dA += (w.lam * u) * cnt_p[:, None] * dmu
        g_fwd, _ = diffnet.backward(pair.fwd, tape_a, dA, need_dx=False)
        return LossValue(sim + w.lam * opt, sim, 0.0, sim, opt, g_fwd, None)

    B, tape_b = diffnet.forward(pair.inv, Q)
    AE, tape_ae = diffnet.forward(pair.fwd, np.vstack([P, B]))
    A, E = AE[:bp], AE[bp:]
    C, tape_c = diffnet.forward(pair.inv, A)

    d1 = A[I] - Q[J]
    d2 = B[J] - P[I]
    sim = float(np.sum(d1 * d1) + np.sum(d2 * d2)) / M
    rc = C - P
    re = E - Q
    rec = float(cnt_p @ np.sum(rc * rc, axis=1) + cnt_q @ np.sum(re * re, axis=1))

    dA = _scatter(I, 2.0 * d1 / M, bp)
    dB = _scatter(J, 2.0 * d2 / M, bq)
    dC = (2.0 * w.lam1) * cnt_p[:, None] * rc
    dE = (2.0 * w.lam1) * cnt_q[:, None] * re

    mu, dmu = head.mean_std(A, grad=True)
    opt = u * float(cnt_p @ (mu - ys_p))
    dA += (w.lam * u) * cnt_p[:, None] * dmu
    if needs_gp:
        sd, dsd = head.std_std(A, grad=True)
        opt += u * w.lam2 * float(cnt_p @ sd)
        dA += (w.lam * w.lam2 * u) * cnt_p[:, None] * dsd
    if pair.variant == "kg":
        Wpq = np.zeros((bp, bq))
        np.add.at(Wpq, (I, J), 1.0 / M)
        rho1, dC_rho = head.correlation_vjp(C, Q, Wpq)
        rho2, dE_rho = head.correlation_vjp(E, P, Wpq.T)
        corr = float(np.sum(Wpq * rho1) + np.sum(Wpq.T * rho2))
        opt += w.corr_sign * w.lam2 * corr
        k = w.lam * w.corr_sign * w.lam2
        dC += k * dC_rho
        dE += k * dE_rho

    g_inv_c, dA_c = diffnet.backward(pair.inv, tape_c, dC)
    dA += dA_c
    g_fwd, dPB = diffnet.backward(pair.fwd, tape_ae, np.vstack([dA, dE]))
    dB += dPB[bp:]
    g_inv_b, _ = diffnet.backward(pair.inv, tape_b, dB, need_dx=False)

    gen = sim + w.lam1 * rec
    return LossValue(gen + w.lam * opt, sim, rec, gen, opt, g_fwd, g_inv_c + g_inv_b)


def iter_batches(data: PairedDataset, batch_size: int, rng: np.random.Generator,
                 batching: str = "pairs"):
    """One epoch of mini-batches covering every pair exactly once.

    ``pairs`` shuffles the pair list and cuts it into consecutive chunks.
    ``blocks`` shuffles the inferior rows and pairs each chunk of them with
    every superior row, giving batches with few distinct rows.
    """
    ni, ns = len(data.inferior), len(data.superior)
    if batching == "pairs":
        I_all, J_all = data.pair_indices()
        perm = rng.permutation(len(I_all))
        for start in range(0, len(perm), batch_size):
            sel = perm[start:start + batch_size]
            yield Batch.from_pairs(data, I_all[sel], J_all[sel])
    elif batching == "blocks":
        rows = max(1, batch_size // ns)
        perm = rng.permutation(ni)
        for start in range(0, ni, rows):
            sel = np.sort(perm[start:start + rows])
            I = np.repeat(np.arange(len(sel)), ns)
            J = np.tile(np.arange(ns), len(sel))
            yield Batch(data.inferior.X[sel], data.inferior.y[sel],
                        data.superior.X, data.superior.y, I, J)
    else:
        raise ValueError(f"unknown batching {batching!r}")


def train(pair: GenerativePair, head, data: PairedDataset, epochs: int = 200,
          batch_size: int | None = None, rng: np.random.Generator | None = None,
          lr: float | None = None, batching: str = "pairs"):
    """Adam training of both networks; returns ``(pair, per-epoch mean loss)``.

    The learning rate defaults to ``0.015 / |D_SM|`` where ``|D_SM|`` is the
    number of distinct rows in ``data``; the batch size defaults to the same
    count. Fresh Adam moments are used on every call.
    """
    if len(data) == 0:
        raise EmptyData("no training pairs")
    if rng is None:
        rng = np.random.default_rng(0)
    n_sm = len(data.inferior) + len(data.superior)
    if lr is None:
        lr = 0.015 / n_sm
    if batch_size is None:
        batch_size = n_sm
    pair.adam_fwd = AdamState.zeros(pair.fwd.size, lr)
    pair.adam_inv = None if pair.single else AdamState.zeros(pair.inv.size, lr)

    trace = []
    for _ in range(epochs):
        acc = 0.0
        for batch in iter_batches(data, batch_size, rng, batching):
            lv = loss(pair, head, batch)
            acc += lv.total * len(batch)
            adam_step(pair.fwd.theta, lv.d_fwd, pair.adam_fwd)
            if not pair.single:
                adam_step(pair.inv.theta, lv.d_inv, pair.adam_inv)
        trace.append(acc / len(data))
    return pair, trace
