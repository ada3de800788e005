import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evogo import gp
from evogo.errors import DegenerateTargets, DimensionMismatch

from conftest import central_difference, rel_err


def matern_ref(r, scale, ell):
    s = r / ell
    return scale * (1 + math.sqrt(5) * s + 5 * s * s / 3) * math.exp(-math.sqrt(5) * s)


def random_model(rng, n=12, d=3, noise=1e-3):
    X = rng.random((n, d))
    y = np.sin(3 * X).sum(axis=1) + 0.1 * rng.normal(size=n)
    params = gp.KernelParams(math.log(rng.uniform(0.5, 2.0)), math.log(rng.uniform(0.2, 0.8)),
                             math.log(noise))
    return gp.from_params(X, y, params)


class TestKernel:
    def test_matches_scalar_formula(self, rng):
        p = gp.KernelParams(0.3, math.log(0.4), math.log(1e-4))
        A, B = rng.random((4, 2)), rng.random((5, 2))
        K = gp.matern52(A, B, p)
        for i in range(4):
            for j in range(5):
                r = float(np.linalg.norm(A[i] - B[j]))
                assert K[i, j] == pytest.approx(matern_ref(r, p.scale, p.lengthscale), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gram_is_psd(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.random((30, 4))
        p = gp.KernelParams(0.0, math.log(rng.uniform(0.05, 2.0)), math.log(1e-12))
        K = gp.matern52(X, X, p)
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_nu_is_fixed(self):
        assert gp.KernelParams().nu == 2.5
        assert len(gp.KernelParams().as_array()) == 3


class TestFit:
    def test_two_points_mll_improves(self):
        X = np.array([[0.1, 0.1], [0.9, 0.9]])
        model = gp.fit(X, np.array([0.0, 1.0]), epochs=300)
        trace = np.asarray(model.mll_trace)
        assert trace[-1] >= trace[0]
        # increasing on average: the second half beats the first
        half = len(trace) // 2
        assert trace[half:].mean() >= trace[:half].mean()

    def test_constant_targets(self):
        X = np.random.default_rng(0).random((5, 2))
        with pytest.warns(DegenerateTargets):
            model = gp.fit(X, np.full(5, 3.5))
        Q = np.random.default_rng(1).random((7, 2))
        mean, cov = gp.posterior(model, Q)
        np.testing.assert_allclose(mean, 3.5)
        prior = model.params.scale + model.params.noise
        np.testing.assert_allclose(np.diag(cov), prior)

    def test_recovers_lengthscale_from_samples(self):
        rng = np.random.default_rng(12)
        X = rng.random((64, 2))
        truth = gp.KernelParams(0.0, math.log(0.2), math.log(1e-4))
        K = gp.gram(X, truth)
        y = np.linalg.cholesky(K) @ rng.normal(size=64)
        model = gp.fit(X, y)
        assert 0.1 <= model.params.lengthscale <= 0.4

    def test_standardizes_targets(self, rng):
        X = rng.random((20, 2))
        y = 100 + 5 * rng.normal(size=20)
        model = gp.fit(X, y, epochs=10)
        assert abs(model.y.mean()) < 1e-12
        assert model.y.std() == pytest.approx(1.0, rel=1e-12)
        assert model.y_mean == pytest.approx(y.mean())

    def test_weights_solve_system(self, rng):
        model = gp.fit(rng.random((25, 3)), rng.normal(size=25), epochs=50)
        K = gp.gram(model.X, model.params) + model.jitter * np.eye(25)
        np.testing.assert_allclose(K @ model.alpha, model.y, atol=1e-6)
        np.testing.assert_allclose(model.L @ model.L.T, K, atol=1e-10)

    def test_deterministic(self, rng):
        X, y = rng.random((20, 2)), rng.normal(size=20)
        a = gp.fit(X, y, epochs=100, rng=np.random.default_rng(1))
        b = gp.fit(X, y, epochs=100, rng=np.random.default_rng(1))
        assert a.params == b.params

    def test_mll_gradient_finite_differences(self, rng):
        X, y = rng.random((15, 2)), rng.normal(size=15)
        p = gp.KernelParams(0.2, math.log(0.3), math.log(1e-2))
        _, g = gp._mll_and_grad(X, y, p)
        fd = central_difference(
            lambda a: gp.marginal_log_likelihood(X, y, gp.KernelParams.from_array(a)),
            p.as_array(), 1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-6)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            gp.fit(np.zeros((1, 2)), np.zeros(1))

    def test_misaligned(self):
        with pytest.raises(DimensionMismatch):
            gp.fit(np.zeros((3, 2)), np.zeros(4))


class TestPosterior:
    def test_interpolates_without_noise(self, rng):
        X = rng.random((10, 2))
        y = rng.normal(size=10)
        model = gp.from_params(X, y, gp.KernelParams(0.0, math.log(0.3), math.log(1e-8)))
        mean, _ = gp.posterior(model, X)
        np.testing.assert_allclose(mean, y, atol=1e-4)

    def test_single_point_closed_form(self, rng):
        x0 = np.array([[0.3, 0.6]])
        y0 = 2.0
        p = gp.KernelParams(0.4, math.log(0.35), math.log(1e-3))
        # standardization needs a reference mean and scale when n = 1
        ybar, ystd = 1.2, 0.7
        model = gp.from_params(x0, [y0], p, y_mean=ybar, y_std=ystd)
        Q = rng.random((5, 2))
        mean, _ = gp.posterior(model, Q)
        for q, m in zip(Q, mean):
            r = float(np.linalg.norm(q - x0[0]))
            k = matern_ref(r, p.scale, p.lengthscale)
            ys = (y0 - ybar) / ystd
            expected = ybar + ystd * (k / (p.scale + p.noise) * ys)
            assert m == pytest.approx(expected, abs=1e-10)

    def test_prior_reversion_far_away(self):
        X = np.random.default_rng(0).random((8, 2)) * 0.1
        y = np.random.default_rng(1).normal(size=8)
        model = gp.from_params(X, y, gp.KernelParams(0.0, math.log(0.01), math.log(1e-4)))
        mean, cov = gp.posterior(model, np.array([[0.9, 0.9], [0.95, 0.2]]))
        np.testing.assert_allclose(mean, y.mean(), atol=1e-3)
        prior = (model.params.scale + model.params.noise) * model.y_std**2
        np.testing.assert_allclose(np.diag(cov), prior, rtol=0, atol=1e-3 * prior)

    def test_covariance_symmetric(self, rng):
        model = random_model(rng)
        _, cov = gp.posterior(model, rng.random((9, 3)))
        np.testing.assert_allclose(cov, cov.T, atol=1e-9)
        assert np.all(np.diag(cov) >= 0)

    def test_predict_agrees_with_posterior(self, rng):
        model = random_model(rng)
        Q = rng.random((6, 3))
        m1, v1 = gp.predict(model, Q)
        m2, cov = gp.posterior(model, Q)
        np.testing.assert_allclose(m1, m2, rtol=1e-10)
        np.testing.assert_allclose(v1, np.diag(cov), rtol=1e-8, atol=1e-12)

    def test_variance_shrinks_with_data(self):
        rng = np.random.default_rng(5)
        X = rng.random((15, 2))
        y = rng.normal(size=15)
        p = gp.KernelParams(0.0, math.log(0.3), math.log(1e-4))
        Q = rng.random((20, 2))
        for k in range(2, 15):
            small = gp.from_params(X[:k], y[:k], p, y_mean=0.0, y_std=1.0)
            large = gp.from_params(X[:k + 1], y[:k + 1], p, y_mean=0.0, y_std=1.0)
            _, v_small = gp.predict(small, Q)
            _, v_large = gp.predict(large, Q)
            assert np.all(v_large <= v_small + 1e-8)

    def test_destandardization_round_trip(self, rng):
        X = rng.random((12, 2))
        y = 50 + 8 * rng.normal(size=12)
        p = gp.KernelParams(0.3, math.log(0.4), math.log(1e-3))
        model = gp.from_params(X, y, p)
        Q = rng.random((6, 2))
        mean, cov = gp.posterior(model, Q)
        # same GP written directly in fitness units: kernel scaled by std^2, prior mean ybar
        s2 = model.y_std**2
        K = s2 * gp.gram(X, p)
        Kq = s2 * gp.matern52(Q, X, p)
        Kqq = s2 * (gp.matern52(Q, Q, p) + p.noise * np.eye(6))
        direct_mean = model.y_mean + Kq @ np.linalg.solve(K, y - model.y_mean)
        direct_cov = Kqq - Kq @ np.linalg.solve(K, Kq.T)
        np.testing.assert_allclose(mean, direct_mean, rtol=1e-8)
        np.testing.assert_allclose(cov, direct_cov, rtol=1e-8, atol=1e-8 * s2)


class TestCorrelation:
    def test_same_point(self, rng):
        model = random_model(rng)
        x = rng.random(3)
        assert gp.correlation(model, x, x) == pytest.approx(1.0, abs=1e-9)

    def test_far_points_decorrelate(self):
        X = np.random.default_rng(0).random((6, 2)) * 0.05
        model = gp.from_params(X, np.arange(6.0), gp.KernelParams(0.0, math.log(0.02),
                                                                  math.log(1e-4)))
        assert abs(gp.correlation(model, [0.9, 0.1], [0.1, 0.9])) < 0.05

    @given(seed=st.integers(0, 10_000))
    def test_symmetric_exactly(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng)
        a, b = rng.random(3), rng.random(3)
        assert gp.correlation(model, a, b) == gp.correlation(model, b, a)
        assert -1.0 <= gp.correlation(model, a, b) <= 1.0

    def test_degenerate_variance_flag(self):
        X = np.array([[0.2, 0.2], [0.8, 0.8]])
        model = gp.from_params(X, [0.0, 1.0], gp.KernelParams(0.0, math.log(0.5),
                                                              math.log(1e-14)))
        rho, ok = gp.correlation(model, X[0], [0.5, 0.5], return_flag=True)
        assert ok is False and rho == 0.0

    def test_vjp_matches_scalar_correlation(self, rng):
        model = random_model(rng)
        U, V = rng.random((4, 3)), rng.random((5, 3))
        rho, _ = model.correlation_vjp(U, V, np.ones((4, 5)))
        for i in range(4):
            for j in range(5):
                assert rho[i, j] == pytest.approx(gp.correlation(model, U[i], V[j]), abs=1e-12)

    def test_vjp_gradient(self, rng):
        model = random_model(rng)
        U, V = rng.random((3, 3)), rng.random((4, 3))
        W = rng.normal(size=(3, 4))
        _, dU = model.correlation_vjp(U, V, W)
        fd = central_difference(lambda Z: float(np.sum(W * model.correlation_vjp(Z, V, W)[0])),
                                U, 1e-6)
        np.testing.assert_allclose(dU, fd, rtol=1e-5, atol=1e-8)


class TestPosteriorGrads:
    def test_symmetric_pair(self):
        X = np.array([[0.2, 0.5], [0.8, 0.5]])
        model = gp.from_params(X, [1.0, 1.0], gp.KernelParams(), y_mean=0.0, y_std=1.0)
        dmu, _ = gp.posterior_grads(model, np.array([0.5, 0.3]))
        assert abs(dmu[0]) < 1e-12

    def test_finite_differences(self):
        rng = np.random.default_rng(77)
        worst_mu = worst_sd = 0.0
        for _ in range(500):
            model = random_model(rng, n=int(rng.integers(3, 12)), d=int(rng.integers(1, 4)),
                                 noise=10 ** rng.uniform(-4, -1))
            q = 0.05 + 0.9 * rng.random(model.dim)
            dmu, dsd = gp.posterior_grads(model, q)
            mu_fd = central_difference(lambda z: gp.predict(model, z[None])[0][0], q, 1e-5)
            sd_fd = central_difference(lambda z: math.sqrt(gp.predict(model, z[None])[1][0]),
                                       q, 1e-5)
            worst_mu = max(worst_mu, np.max(rel_err(dmu, mu_fd, floor=1e-3)))
            worst_sd = max(worst_sd, np.max(rel_err(dsd, sd_fd, floor=1e-3)))
        assert worst_mu < 1e-4
        assert worst_sd < 1e-4

    def test_at_training_point_with_tiny_noise(self):
        X = np.array([[0.3, 0.3], [0.7, 0.6]])
        model = gp.from_params(X, [0.0, 1.0], gp.KernelParams(0.0, math.log(0.5),
                                                              math.log(1e-14)))
        dmu, dsd = gp.posterior_grads(model, X[0])
        assert np.all(np.isfinite(dmu)) and np.all(np.isfinite(dsd))
        np.testing.assert_array_equal(dsd, 0.0)
