import json
import math
import os

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mrsur import special
from mrsur.special import bvn_cdf, normal_cdf

ORACLE = os.path.join(os.path.dirname(__file__), "oracles", "bvn_grid.json")


def _oracle_rows():
    with open(ORACLE) as fh:
        data = json.load(fh)
    return data["grid"] + data["extra"]


class TestNormalCdf:
    def test_zero(self):
        assert normal_cdf(0.0) == 0.5

    def test_saturation(self):
        assert abs(normal_cdf(40.0) - 1.0) <= 1e-16
        assert normal_cdf(-40.0) >= 0.0

    def test_value_at_one(self):
        mp.mp.dps = 30
        ref = float(mp.ncdf(1))
        assert abs(normal_cdf(1.0) - 0.8413447460685429) < 1e-16
        assert abs(normal_cdf(1.0) - ref) < 1e-16

    def test_symmetry(self):
        x = np.linspace(-8, 8, 1601)
        assert_allclose(normal_cdf(-x), 1.0 - normal_cdf(x), atol=1e-15)

    def test_monotone(self):
        x = np.linspace(-10, 10, 5001)
        assert np.all(np.diff(normal_cdf(x)) >= 0)

    def test_array_matches_scalar(self):
        x = np.array([-3.0, -0.2, 0.0, 1.7])
        assert_allclose(normal_cdf(x), [normal_cdf(float(v)) for v in x], atol=1e-16)


class TestBvnCdfValues:
    def test_independent_origin(self):
        assert abs(bvn_cdf(0.0, 0.0, 0.0) - 0.25) < 1e-16

    def test_perfect_correlation(self):
        assert bvn_cdf(0.7, 0.7, 1.0) == pytest.approx(normal_cdf(0.7), abs=1e-15)
        assert bvn_cdf(0.2, -0.4, 1.0) == pytest.approx(normal_cdf(-0.4), abs=1e-15)

    def test_perfect_anticorrelation(self):
        a, b = 0.8, 0.3
        ref = max(0.0, normal_cdf(a) + normal_cdf(b) - 1.0)
        assert bvn_cdf(a, b, -1.0) == pytest.approx(ref, abs=1e-15)
        assert bvn_cdf(-1.0, -2.0, -1.0) == 0.0

    def test_orthant_closed_form(self):
        for rho in (-0.95, -0.5, 0.0, 0.3, 0.5, 0.93, 0.999):
            ref = 0.25 + math.asin(rho) / (2 * math.pi)
            assert abs(bvn_cdf(0.0, 0.0, rho) - ref) < 1e-15
        assert abs(bvn_cdf(0.0, 0.0, 0.5) - 1.0 / 3.0) < 1e-15

    @pytest.mark.parametrize("row", _oracle_rows())
    def test_against_quadrature_oracle(self, row):
        a, b, r, ref = row
        assert abs(bvn_cdf(a, b, r) - float(ref)) <= 1e-14

    def test_live_oracle_spot_checks(self):
        # recompute a few points directly, independent of the frozen file
        mp.mp.dps = 25
        for a, b, r in [(0.4, -1.1, 0.37), (-2.2, 1.3, -0.96), (1.1, 1.2, 0.98)]:
            s = mp.sqrt(1 - mp.mpf(r) ** 2)
            ref = mp.quad(lambda x: mp.npdf(x) * mp.ncdf((b - r * x) / s), [-mp.inf, a])
            assert abs(bvn_cdf(a, b, r) - float(ref)) < 1e-14

    def test_infinite_limits(self):
        assert bvn_cdf(-np.inf, 0.3, 0.2) == 0.0
        assert bvn_cdf(np.inf, 0.3, 0.2) == pytest.approx(normal_cdf(0.3), abs=1e-15)
        assert bvn_cdf(np.inf, np.inf, -0.4) == 1.0


class TestBvnCdfProperties:
    def test_independence_grid(self):
        g = np.linspace(-5, 5, 41)
        A, B = np.meshgrid(g, g)
        assert_allclose(bvn_cdf(A, B, 0.0), normal_cdf(A) * normal_cdf(B), atol=1e-13)

    def test_large_b_marginal(self):
        a = np.linspace(-5, 5, 21)
        for rho in (-0.99, -0.5, 0.0, 0.6, 0.95, 0.9999):
            assert_allclose(bvn_cdf(a, 40.0, rho), normal_cdf(a), atol=1e-12)

    def test_monotone_on_grid(self):
        g = np.linspace(-4, 4, 33)
        rs = np.linspace(-0.999, 0.999, 41)
        A, B, R = np.meshgrid(g, g, rs, indexing="ij")
        P = bvn_cdf(A, B, R)
        assert np.all(np.diff(P, axis=0) >= -1e-15)
        assert np.all(np.diff(P, axis=1) >= -1e-15)
        assert np.all(np.diff(P, axis=2) >= -1e-15)

    @given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-1, 1))
    @settings(max_examples=300, deadline=None)
    def test_symmetric_and_bounded(self, a, b, r):
        p = bvn_cdf(a, b, r)
        assert 0.0 <= p <= 1.0
        assert abs(p - bvn_cdf(b, a, r)) < 1e-15
        assert p <= min(normal_cdf(a), normal_cdf(b)) + 1e-15

    @given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-0.999, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_reflection_identity(self, a, b, r):
        # P(X <= a, Y <= b; r) + P(X <= a, Y > b; r) = Phi(a)
        lhs = bvn_cdf(a, b, r) + bvn_cdf(a, -b, -r)
        assert abs(lhs - normal_cdf(a)) < 1e-14

    def test_broadcast_shapes(self):
        out = bvn_cdf(np.zeros((3, 1)), np.zeros((1, 4)), 0.5)
        assert out.shape == (3, 4)
        assert isinstance(bvn_cdf(0.1, 0.2, 0.3), float)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            bvn_cdf(0.0, 0.0, 1.5)
        with pytest.raises(ValueError):
            bvn_cdf(np.nan, 0.0, 0.1)


class TestGaussianIdentity:
    """E[Phi_d(W; m', K')] = Phi_d(m; m', K + K') for W ~ N(m, K)."""

    def _check_1d(self, rng):
        m, K = rng.normal(), rng.uniform(0.1, 2.0)
        mp_, Kp = rng.normal(), rng.uniform(0.1, 2.0)
        W = m + math.sqrt(K) * rng.standard_normal(10 ** 6)
        vals = normal_cdf((W - mp_) / math.sqrt(Kp))
        ref = normal_cdf((m - mp_) / math.sqrt(K + Kp))
        se = vals.std() / 1e3
        assert abs(vals.mean() - ref) < 3 * se + 1e-12

    def _check_2d(self, rng):
        m = rng.normal(size=2)
        mp_ = rng.normal(size=2)

        def spd():
            A = rng.normal(size=(2, 2))
            return A @ A.T + 0.2 * np.eye(2)

        K, Kp = spd(), spd()
        W = m + rng.standard_normal((10 ** 6, 2)) @ np.linalg.cholesky(K).T
        sd = np.sqrt(np.diag(Kp))
        rho = Kp[0, 1] / (sd[0] * sd[1])
        vals = bvn_cdf((W[:, 0] - mp_[0]) / sd[0], (W[:, 1] - mp_[1]) / sd[1], rho)
        S = K + Kp
        s = np.sqrt(np.diag(S))
        ref = bvn_cdf((m[0] - mp_[0]) / s[0], (m[1] - mp_[1]) / s[1], S[0, 1] / (s[0] * s[1]))
        se = vals.std() / 1e3
        assert abs(vals.mean() - ref) < 3 * se + 1e-12

    def test_one_dimensional(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            self._check_1d(rng)

    def test_two_dimensional(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            self._check_2d(rng)


class TestBackends:
    def test_numba_and_numpy_agree(self):
        rng = np.random.default_rng(5)
        n = 20000
        a = rng.normal(0, 3, n)
        b = rng.normal(0, 3, n)
        r = rng.uniform(-1, 1, n)
        r[:50] = 1.0
        r[50:100] = -1.0
        a[100:120] = np.inf
        b[120:140] = -np.inf
        assert_allclose(special._bvn_numba(a, b, r), special._bvn_numpy(a, b, r),
                        atol=1e-15, rtol=0)
