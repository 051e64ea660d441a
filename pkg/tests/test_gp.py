import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, special, stats

from mrsur import gp
from mrsur.gp import (CholeskyFailure, MaternKernel, StationaryModel, fit, kernel_eval,
                      log_marginal_likelihood, posterior_mean_cov)


def matern_bessel(h, nu):
    """General Matern correlation through the modified Bessel function."""
    h = np.asarray(h, dtype=float)
    s = np.sqrt(2 * nu) * h
    with np.errstate(invalid="ignore"):
        val = 2 ** (1 - nu) / special.gamma(nu) * s ** nu * special.kv(nu, s)
    return np.where(h == 0, 1.0, val)


def kriging_oracle(K, F, k, f, kxx, y):
    """Mean/variance from the bordered (saddle-point) kriging system."""
    n, p = F.shape
    A = np.block([[K, F], [F.T, np.zeros((p, p))]])
    rhs = np.concatenate([k, f])
    sol = np.linalg.solve(A, rhs)
    lam = sol[:n]
    return lam @ y, kxx - sol @ rhs


class TestKernel:
    def test_zero_distance(self):
        k = MaternKernel(1.0, 0.3, 2.5)
        assert kernel_eval(k, 0.0) == 1.0

    def test_decay(self):
        for nu in (0.5, 1.5, 2.5):
            k = MaternKernel(2.0, 0.3, nu)
            assert abs(kernel_eval(k, 1e6 * 0.3)) < 1e-12

    def test_closed_form_52(self):
        k = MaternKernel(1.0, 1.0, 2.5)
        s5 = math.sqrt(5.0)
        assert kernel_eval(k, 1.0) == pytest.approx((1 + s5 + 5 / 3) * math.exp(-s5), abs=1e-15)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    def test_matches_bessel_form(self, nu):
        h = np.linspace(0.0, 6.0, 121)
        k = MaternKernel(1.0, 1.0, nu)
        vals = [kernel_eval(k, v) for v in h]
        assert_allclose(vals, matern_bessel(h, nu), atol=1e-13)

    def test_strictly_decreasing(self):
        k = MaternKernel(1.3, 0.7, 1.5)
        v = np.array([kernel_eval(k, d) for d in np.linspace(0, 5, 200)])
        assert np.all(np.diff(v) < 0)

    def test_product_form_and_backends(self):
        rng = np.random.default_rng(0)
        U1, U2 = rng.random((7, 2)), rng.random((5, 2))
        ls = np.array([0.3, 0.8])
        ref = matern_bessel(np.abs(U1[:, None, 0] - U2[None, :, 0]) / ls[0], 2.5) * \
            matern_bessel(np.abs(U1[:, None, 1] - U2[None, :, 1]) / ls[1], 2.5)
        inv = 1.0 / ls
        assert_allclose(gp._matern_corr_nb(U1, U2, inv, 2), ref, atol=1e-13)
        assert_allclose(gp._matern_corr_np(U1, U2, inv, 2), ref, atol=1e-13)

    def test_invalid(self):
        with pytest.raises(ValueError):
            MaternKernel(0.0, 1.0)
        with pytest.raises(ValueError):
            MaternKernel(1.0, -1.0)
        with pytest.raises(ValueError):
            MaternKernel(1.0, 1.0, nu=2.0)
        with pytest.raises(ValueError):
            kernel_eval(MaternKernel(1.0, 1.0), -0.1)


def _model(mean=0.0, var=1.0, ls=0.3, nu=2.5):
    return StationaryModel(MaternKernel(var, ls, nu), mean)


class TestFit:
    def test_single_observation_interpolates(self):
        st_ = fit(_model(), [[0.4]], [1.7])
        m, k = posterior_mean_cov(st_, [0.4], [0.4])
        assert m == pytest.approx(1.7, abs=1e-8)
        assert abs(k) < 1e-8

    def test_far_from_data_returns_prior(self):
        st_ = fit(_model(mean=0.5), [[0.0], [0.1]], [1.0, 2.0])
        m, v = st_.predict([[1e4]])
        assert m[0] == pytest.approx(0.5, abs=1e-10)
        assert v[0] == pytest.approx(1.0, abs=1e-10)

    def test_scalar_noise_formula(self):
        for lam in (0.3, 1.0, 4.0):
            st_ = fit(_model(), [[0.2]], [0.9], noise=[lam])
            m, k = posterior_mean_cov(st_, [0.2], [0.2])
            # the baseline jitter acts as extra nugget variance
            t = lam + st_.jitter
            assert k == pytest.approx(1 - 1 / (1 + t), abs=1e-14)
            assert m == pytest.approx(0.9 / (1 + t), abs=1e-14)
        st_ = fit(_model(), [[0.2]], [0.9], noise=[1.0])
        # exact 0.5 up to the 1e-10 baseline jitter
        assert posterior_mean_cov(st_, [0.2], [0.2])[1] == pytest.approx(0.5, abs=1e-10)

    def test_scalar_mean_formula_off_data(self):
        mod = _model(mean=0.3, var=2.0, ls=0.5)
        lam, z, x, q = 0.2, 1.4, 0.1, 0.35
        st_ = fit(mod, [[x]], [z], noise=[lam])
        lam += st_.jitter
        kqx = kernel_eval(mod.kernel, abs(q - x))
        m_ref = 0.3 + kqx / (2.0 + lam) * (z - 0.3)
        k_ref = 2.0 - kqx ** 2 / (2.0 + lam)
        m, k = posterior_mean_cov(st_, [q], [q])
        assert m == pytest.approx(m_ref, abs=1e-14)
        assert k == pytest.approx(k_ref, abs=1e-14)

    def test_empty_data_is_prior(self):
        mod = _model(mean=1.5)
        st_ = fit(mod, np.zeros((0, 1)), [])
        m, k = posterior_mean_cov(st_, [0.1], [0.3])
        assert m == 1.5
        assert k == pytest.approx(kernel_eval(mod.kernel, 0.2), abs=1e-15)

    def test_empty_data_unknown_mean_rejected(self):
        with pytest.raises(ValueError):
            fit(_model(mean=None), np.zeros((0, 1)), [])

    def test_universal_kriging_matches_bordered_system(self):
        rng = np.random.default_rng(3)
        mod = _model(mean=None, var=1.5, ls=0.25)
        X = rng.random((8, 1))
        z = rng.normal(size=8)
        lam = rng.uniform(0.0, 0.1, 8)
        st_ = fit(mod, X, z, lam)
        K = mod.cov(X, X) + np.diag(lam + st_.jitter)
        F = np.ones((8, 1))
        for q in rng.random(5):
            k = mod.cov(X, [[q]])[:, 0]
            m_ref, v_ref = kriging_oracle(K, F, k, np.ones(1), 1.5, z)
            m, v = st_.predict([[q]])
            assert m[0] == pytest.approx(m_ref, abs=1e-10)
            assert v[0] == pytest.approx(v_ref, abs=1e-10)

    def test_jitter_escalation_on_duplicates(self):
        st_ = fit(_model(ls=1.0), [[0.5], [0.5], [0.5 + 1e-9]], [1.0, 1.0, 1.0])
        assert st_.jitter >= gp.JITTER_START

    def test_cholesky_failure(self):
        class Bad:
            def cov(self, A, B):
                return np.array([[1.0, 2.0], [2.0, 1.0]])

            def diag(self, X):
                return np.ones(2)

            def basis(self, X):
                return np.empty((2, 0))

            def prior_mean(self, X):
                return np.zeros(2)

        with pytest.raises(CholeskyFailure, match="eigenvalue"):
            fit(Bad(), [[0.0], [1.0]], [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fit(_model(), [[0.0], [1.0]], [0.0])
        with pytest.raises(ValueError):
            fit(_model(), [[0.0]], [0.0], noise=[-1.0])


class TestPosteriorProperties:
    @given(st.integers(1, 12), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_variance_bounds_and_monotonicity(self, n, seed):
        rng = np.random.default_rng(seed)
        mod = _model(var=1.3, ls=0.2)
        X = rng.random((n + 1, 1))
        z = rng.normal(size=n + 1)
        lam = rng.uniform(0, 0.05, n + 1)
        Q = rng.random((20, 1))
        _, v_n = fit(mod, X[:n], z[:n], lam[:n]).predict(Q)
        _, v_n1 = fit(mod, X, z, lam).predict(Q)
        assert np.all(v_n <= 1.3 + 1e-9)
        assert np.all(v_n1 <= v_n + 1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        mod = _model(mean=None, ls=0.3)
        X = rng.random((10, 1))
        z = rng.normal(size=10)
        perm = rng.permutation(10)
        Q = rng.random((15, 1))
        a = fit(mod, X, z)
        b = fit(mod, X[perm], z[perm])
        assert_allclose(a.predict(Q)[0], b.predict(Q)[0], atol=1e-10)
        assert_allclose(a.cov(Q, Q), b.cov(Q, Q), atol=1e-10)
        assert a.log_marginal_likelihood() == pytest.approx(b.log_marginal_likelihood(), rel=1e-12)

    def test_covariance_symmetry_and_cauchy_schwarz(self):
        rng = np.random.default_rng(5)
        mod = _model(mean=None, ls=0.2)
        st_ = fit(mod, rng.random((6, 1)), rng.normal(size=6), np.full(6, 0.01))
        Q = rng.random((30, 1))
        C = st_.cov(Q, Q)
        assert_allclose(C, C.T, atol=1e-14)
        d = np.sqrt(np.clip(np.diag(C), 0, None))
        assert np.all(np.abs(C) <= np.outer(d, d) + 1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        X, z = rng.random((5, 1)), rng.normal(size=5)
        a = fit(_model(), X, z).predict([[0.33]])
        b = fit(_model(), X, z).predict([[0.33]])
        assert a[0][0] == b[0][0] and a[1][0] == b[1][0]


class TestLogMarginalLikelihood:
    def test_scalar_values(self):
        st0 = fit(_model(), [[0.0]], [0.0])
        assert log_marginal_likelihood(st0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-9)
        st1 = fit(_model(), [[0.0]], [1.0])
        assert log_marginal_likelihood(st1) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-9)

    def test_matches_multivariate_normal(self):
        rng = np.random.default_rng(7)
        mod = _model(mean=0.4, var=0.8, ls=0.3)
        X = rng.random((9, 1))
        z = rng.normal(size=9)
        lam = rng.uniform(0.01, 0.2, 9)
        st_ = fit(mod, X, z, lam)
        ref = stats.multivariate_normal(np.full(9, 0.4),
                                        mod.cov(X, X) + np.diag(lam + st_.jitter)).logpdf(z)
        assert st_.log_marginal_likelihood() == pytest.approx(ref, abs=1e-9)

    def test_restricted_matches_integrated_likelihood(self):
        # log of the integral over the constant mean beta of N(z; beta, K)
        rng = np.random.default_rng(8)
        mod = _model(mean=None, var=1.0, ls=0.25)
        X = rng.random((6, 1))
        z = rng.normal(1.0, 1.0, size=6)
        lam = np.full(6, 0.05)
        st_ = fit(mod, X, z, lam)
        Kt = mod.cov(X, X) + np.diag(lam + st_.jitter)
        dist = stats.multivariate_normal(np.zeros(6), Kt)
        b0 = float(st_.beta[0])
        shift = dist.logpdf(z - b0)
        val, _ = integrate.quad(lambda b: math.exp(dist.logpdf(z - b) - shift), b0 - 30, b0 + 30,
                                points=[b0], epsabs=1e-13, limit=200)
        ref = math.log(val) + shift
        assert st_.log_marginal_likelihood(restricted=True) == pytest.approx(ref, abs=1e-8)
        # the profiled version is the likelihood at the GLS estimate
        assert st_.log_marginal_likelihood() == pytest.approx(dist.logpdf(z - b0), abs=1e-9)

    def test_vague_duplicate_adds_predictive_density(self):
        # a duplicate with variance 1e12 contributes log N(z; m_n, k_n + 1e12),
        # so differences between hyperparameter settings are unchanged
        rng = np.random.default_rng(9)
        X = rng.random((5, 1))
        z = rng.normal(size=5)
        Xd = np.vstack([X, X[:1]])
        zd = np.append(z, z[0])
        lams = np.append(np.zeros(5), 1e12)
        diffs = []
        for ls in (0.2, 0.4):
            mod = _model(ls=ls)
            base = fit(mod, X, z)
            aug = fit(mod, Xd, zd, lams)
            m, v = base.predict(X[:1])
            pred = stats.norm(m[0], math.sqrt(v[0] + 1e12)).logpdf(z[0])
            assert aug.log_marginal_likelihood() - base.log_marginal_likelihood() == \
                pytest.approx(pred, abs=1e-6)
            diffs.append((base.log_marginal_likelihood(), aug.log_marginal_likelihood()))
        assert diffs[0][0] - diffs[1][0] == pytest.approx(diffs[0][1] - diffs[1][1], abs=1e-6)
