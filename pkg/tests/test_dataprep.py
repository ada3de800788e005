import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evogo import gp
from evogo.dataprep import (AugmentSpec, Dataset, PairedDataset, median_merge, prepare,
                            select_training_set)
from evogo.errors import DimensionMismatch, EmptySplit


def ranked(n=10, d=2, gen=1):
    X = np.linspace(0, 1, n * d).reshape(n, d)
    return Dataset.from_evaluations(X, np.arange(1.0, n + 1), gen)


def rows(ds):
    return {tuple(r) for r in ds.X}


class TestPrepare:
    def test_single_superior(self):
        d_sm, pairs = prepare(ranked(), 10, 0.1, 0.0)
        np.testing.assert_array_equal(pairs.superior.y, [1.0])
        assert len(pairs.inferior) == 9
        assert len(pairs) == 9
        assert len(d_sm) == 10

    def test_three_superior(self):
        _, pairs = prepare(ranked(), 10, 0.3, 0.0)
        np.testing.assert_array_equal(pairs.superior.y, [1.0, 2.0, 3.0])
        assert len(pairs) == 21

    def test_window_adds_previous_generation_row(self):
        # generation 2 has fitness {1, 2, 3}: max 3, std ~0.816, bound ~3.245
        prev = Dataset.from_evaluations(np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]),
                                        [3.2, 9.0, 10.0], 1)
        cur = Dataset.from_evaluations(np.array([[0.5, 0.5], [0.6, 0.6], [0.7, 0.7]]),
                                       [1.0, 2.0, 3.0], 2)
        history = prev.concat(cur)
        d_sm, n_elite = select_training_set(history, 3, 0.3)
        elites = d_sm.take(np.arange(n_elite))
        assert (0.1, 0.1) not in rows(elites)
        assert (0.1, 0.1) in rows(d_sm)
        assert len(d_sm) == 4
        d_sm_0, _ = select_training_set(history, 3, 0.0)
        assert len(d_sm_0) == 3

    def test_elites_are_smallest(self):
        rng = np.random.default_rng(0)
        history = Dataset.from_evaluations(rng.random((30, 2)), rng.permutation(30).astype(float))
        d_sm, n_elite = select_training_set(history, 10, 0.0)
        np.testing.assert_array_equal(np.sort(d_sm.y[:n_elite]), np.arange(10.0))

    def test_empty_split(self):
        with pytest.raises(EmptySplit):
            prepare(ranked(1), 1, 0.5, 0.0)

    def test_bad_eta(self):
        for eta in (0.0, 1.0):
            with pytest.raises(ValueError):
                prepare(ranked(), 10, eta, 0.0)

    def test_negative_window(self):
        with pytest.raises(ValueError):
            prepare(ranked(), 10, 0.1, -1.0)

    def test_empty_history(self):
        with pytest.raises(ValueError):
            prepare(Dataset.empty(2), 10, 0.1, 0.0)


class TestAugmentation:
    def history(self):
        rng = np.random.default_rng(4)
        X = rng.random((20, 2))
        return Dataset.from_evaluations(X, np.sum((X - 0.5) ** 2, axis=1), 1)

    def test_adds_flagged_rows_below_threshold(self):
        hist = self.history()
        model = gp.fit(hist.X, hist.y, epochs=50)
        d_sm, pairs = prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(64, 1.0),
                              surrogate_hint=model, rng=np.random.default_rng(0))
        assert d_sm.augmented.sum() == 10
        assert d_sm.evaluated().augmented.sum() == 0
        assert len(d_sm.evaluated()) == 10
        aug = d_sm.take(np.flatnonzero(d_sm.augmented))
        np.testing.assert_allclose(aug.y, gp.predict(model, aug.X)[0])
        assert np.all((aug.X >= 0) & (aug.X <= 1))
        # the split fraction is taken over the enlarged elite set
        assert len(pairs.superior) == 2

    def test_absent_at_threshold(self):
        hist = self.history()
        d_sm, _ = prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(10, 1.0),
                          rng=np.random.default_rng(0))
        assert not d_sm.augmented.any()

    def test_count_follows_factor(self):
        hist = self.history()
        model = gp.fit(hist.X, hist.y, epochs=20)
        d_sm, _ = prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(64, 0.5),
                          surrogate_hint=model, rng=np.random.default_rng(0))
        assert d_sm.augmented.sum() == 5

    def test_deterministic_given_seed(self):
        hist = self.history()
        model = gp.fit(hist.X, hist.y, epochs=20)
        a, _ = prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(), surrogate_hint=model,
                       rng=np.random.default_rng(8))
        b, _ = prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(), surrogate_hint=model,
                       rng=np.random.default_rng(8))
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_needs_rng(self):
        hist = self.history()
        model = gp.fit(hist.X, hist.y, epochs=5)
        with pytest.raises(ValueError):
            prepare(hist, 10, 0.1, 0.0, augment=AugmentSpec(), surrogate_hint=model)


@st.composite
def histories(draw):
    n_prev = draw(st.integers(1, 15))
    n_cur = draw(st.integers(1, 15))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    distinct = draw(st.booleans())
    n = n_prev + n_cur
    y = rng.permutation(n).astype(float) if distinct else rng.integers(0, 4, n).astype(float)
    gen = np.r_[np.ones(n_prev, int), np.full(n_cur, 2)]
    return Dataset(rng.random((n, 2)), y, gen, False)


class TestProperties:
    @given(hist=histories(), init=st.integers(2, 20), eta=st.floats(0.05, 0.5),
           eps=st.floats(0, 2))
    def test_split_invariants(self, hist, init, eta, eps):
        try:
            d_sm, pairs = prepare(hist, init, eta, eps)
        except EmptySplit:
            return
        n_elite = min(init, len(hist))
        elites = d_sm.take(np.arange(n_elite))
        sup, inf = pairs.superior, pairs.inferior
        assert len(pairs) == len(sup) * len(inf)
        assert len(sup) + len(inf) == len(d_sm)
        assert rows(sup).isdisjoint(rows(inf)) or len(rows(d_sm)) < len(d_sm)
        assert rows(elites) <= rows(sup) | rows(inf)
        assert sup.y.max() <= inf.y.min()
        count = 0
        for (p, yp), (q, yq) in pairs.pairs():
            assert yq <= yp
            count += 1
        assert count == len(pairs)

    @given(hist=histories(), split=st.integers(1, 29))
    def test_median_merge_invariants(self, hist, split):
        split = min(split, len(hist) - 1) if len(hist) > 1 else 1
        cur = hist.take(np.arange(split))
        off = hist.take(np.arange(split, len(hist)))
        out = median_merge(cur, off)
        assert 1 <= len(out) <= int(np.ceil(len(hist) / 2))
        assert out.y[0] == hist.y.min()
        assert np.all(np.diff(out.y) >= 0)


class TestMedianMerge:
    def test_one_to_ten(self):
        cur = Dataset.from_evaluations(np.zeros((5, 1)), [1, 3, 5, 7, 9])
        off = Dataset.from_evaluations(np.ones((5, 1)), [2, 4, 6, 8, 10])
        np.testing.assert_array_equal(median_merge(cur, off).y, [1, 2, 3, 4, 5])

    def test_all_equal(self):
        cur = Dataset.from_evaluations(np.arange(3.0)[:, None], [2.0, 2.0, 2.0])
        off = Dataset.from_evaluations(np.arange(3.0, 6.0)[:, None], [2.0, 2.0, 2.0])
        out = median_merge(cur, off)
        assert len(out) == 1 and out.y[0] == 2.0

    def test_interleaved(self):
        cur = Dataset.from_evaluations(np.zeros((3, 1)), [1, 3, 5])
        off = Dataset.from_evaluations(np.ones((3, 1)), [2, 4, 6])
        np.testing.assert_array_equal(median_merge(cur, off).y, [1, 2, 3])

    def test_ties_at_median_excluded(self):
        cur = Dataset.from_evaluations(np.zeros((3, 1)), [1, 2, 2])
        off = Dataset.from_evaluations(np.ones((2, 1)), [2, 3])
        np.testing.assert_array_equal(median_merge(cur, off).y, [1])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            median_merge(Dataset.from_evaluations(np.zeros((2, 1)), [1, 2]),
                         Dataset.from_evaluations(np.zeros((2, 2)), [1, 2]))


class TestDataset:
    def test_alignment_checked(self):
        with pytest.raises(DimensionMismatch):
            Dataset.from_evaluations(np.zeros((3, 2)), [1.0, 2.0])

    def test_pair_order(self):
        inf = Dataset.from_evaluations(np.array([[0.0], [1.0]]), [5.0, 6.0])
        sup = Dataset.from_evaluations(np.array([[2.0], [3.0], [4.0]]), [1.0, 2.0, 3.0])
        pairs = list(PairedDataset(inf, sup).pairs())
        assert len(pairs) == 6
        assert pairs[4][0][1] == 6.0 and pairs[4][1][1] == 2.0
