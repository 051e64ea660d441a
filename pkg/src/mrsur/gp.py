"""Gaussian-process conditioning with Cholesky factorisations.

Covariance models only need to expose ``cov(X1, X2)``, ``diag(X)``,
``basis(X)`` and ``prior_mean(X)``. Columns of ``basis`` are regression
functions whose coefficients carry an improper uniform prior; they are
integrated out in closed form (universal kriging), so the posterior
covariance includes the coefficient uncertainty.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._accel import USE_NUMBA, njit

__all__ = [
    "CholeskyFailure",
    "MaternKernel",
    "StationaryModel",
    "PosteriorState",
    "fit",
    "kernel_eval",
    "posterior_mean_cov",
    "log_marginal_likelihood",
]

_NU_CODES = {0.5: 0, 1.5: 1, 2.5: 2}
_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class CholeskyFailure(np.linalg.LinAlgError):
    """Gram matrix not positive definite even after maximal jitter."""


# --------------------------------------------------------------------------
# Matern correlation kernels
# --------------------------------------------------------------------------


@njit
def _matern_1d_nb(h, code):
    if code == 0:
        return math.exp(-h)
    if code == 1:
        s = _SQRT3 * h
        return (1.0 + s) * math.exp(-s)
    s = _SQRT5 * h
    return (1.0 + s + s * s / 3.0) * math.exp(-s)


@njit
def _matern_corr_nb(U1, U2, inv_ls, code):
    n1, n2, d = U1.shape[0], U2.shape[0], U1.shape[1]
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            acc = 1.0
            for k in range(d):
                acc *= _matern_1d_nb(abs(U1[i, k] - U2[j, k]) * inv_ls[k], code)
            out[i, j] = acc
    return out


def _matern_1d_np(h, code):
    if code == 0:
        return np.exp(-h)
    if code == 1:
        s = _SQRT3 * h
        return (1.0 + s) * np.exp(-s)
    s = _SQRT5 * h
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _matern_corr_np(U1, U2, inv_ls, code):
    out = np.ones((U1.shape[0], U2.shape[0]))
    for k in range(U1.shape[1]):
        h = np.abs(U1[:, k, None] - U2[None, :, k]) * inv_ls[k]
        out *= _matern_1d_np(h, code)
    return out


def matern_corr(U1, U2, lengthscale, nu):
    """Product-form Matern correlation matrix between two point sets."""
    U1 = np.ascontiguousarray(np.atleast_2d(U1), dtype=float)
    U2 = np.ascontiguousarray(np.atleast_2d(U2), dtype=float)
    inv_ls = 1.0 / np.broadcast_to(np.asarray(lengthscale, dtype=float),
                                   (U1.shape[1],))
    code = _NU_CODES[float(nu)]
    if USE_NUMBA:
        return _matern_corr_nb(U1, U2, np.ascontiguousarray(inv_ls), code)
    return _matern_corr_np(U1, U2, inv_ls, code)


@dataclass(frozen=True)
class MaternKernel:
    """Stationary Matern covariance ``variance * M_nu(|u - u'| / lengthscale)``.

    ``lengthscale`` may be a scalar or one value per input dimension, in
    which case the correlation is the product of one-dimensional factors.
    """

    variance: float
    lengthscale: object
    nu: float = 2.5

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be > 0, got {self.variance}")
        if not np.all(np.asarray(self.lengthscale, dtype=float) > 0):
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")
        if float(self.nu) not in _NU_CODES:
            raise ValueError(f"nu must be one of 1/2, 3/2, 5/2, got {self.nu}")

    def corr(self, U1, U2):
        return matern_corr(U1, U2, self.lengthscale, self.nu)

    def __call__(self, U1, U2):
        return self.variance * self.corr(U1, U2)


def kernel_eval(kernel, d):
    """Kernel value at scalar distance ``d`` (first lengthscale is used)."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    ls = float(np.ravel(kernel.lengthscale)[0])
    return kernel.variance * float(_matern_1d_np(np.float64(d / ls),
                                                 _NU_CODES[float(kernel.nu)]))


@dataclass(frozen=True)
class StationaryModel:
    """Single-kernel GP prior with a known or unknown constant mean."""

    kernel: MaternKernel
    mean: float | None = 0.0

    def cov(self, X1, X2):
        return self.kernel(X1, X2)

    def diag(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.kernel.variance)

    def basis(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.ones((n, 1)) if self.mean is None else np.empty((n, 0))

    def prior_mean(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.zeros(n) if self.mean is None else np.full(n, float(self.mean))


# --------------------------------------------------------------------------
# Conditioning
# --------------------------------------------------------------------------


class Projected(NamedTuple):
    """Query points pre-processed against a posterior state."""

    X: np.ndarray
    mean: np.ndarray
    V: np.ndarray   # L^{-1} k(X_train, X)
    Rt: np.ndarray  # Lw^{-1} (F(X)^T - F^T K^{-1} k(X_train, X))


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """Conditioned GP: Cholesky factor, GLS mean coefficients and caches."""
    model: object
    X: np.ndarray
    z: np.ndarray
    noise: np.ndarray
    chol: np.ndarray
    jitter: float
    F: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    KiF: np.ndarray
    chol_w: np.ndarray
    resid_quad: float

    @property
    def n(self):
        return self.X.shape[0]

    def project(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        m = self.model.prior_mean(Q)
        FQ = self.model.basis(Q)
        if self.n == 0:
            return Projected(Q, m, np.zeros((0, Q.shape[0])),
                             np.zeros((0, Q.shape[0])))
        kXQ = self.model.cov(self.X, Q)
        mean = m + FQ @ self.beta + kXQ.T @ self.alpha
        V = solve_triangular(self.chol, kXQ, lower=True, check_finite=False)
        if self.F.shape[1]:
            R = FQ.T - self.KiF.T @ kXQ
            Rt = solve_triangular(self.chol_w, R, lower=True, check_finite=False)
        else:
            Rt = np.zeros((0, Q.shape[0]))
        return Projected(Q, mean, V, Rt)

    def cov_projected(self, P1, P2):
        return self.model.cov(P1.X, P2.X) - P1.V.T @ P2.V + P1.Rt.T @ P2.Rt

    def var_projected(self, P):
        v = (self.model.diag(P.X) - np.einsum("ij,ij->j", P.V, P.V)
             + np.einsum("ij,ij->j", P.Rt, P.Rt))
        return np.maximum(v, 0.0)

    def predict(self, Q):
        """Posterior mean and variance at the rows of ``Q``."""
        P = self.project(Q)
        return P.mean, self.var_projected(P)

    def cov(self, Q1, Q2):
        return self.cov_projected(self.project(Q1), self.project(Q2))

    def log_marginal_likelihood(self, restricted=False):
        """Gaussian log-likelihood of the training responses.

        With ``restricted=True`` the regression coefficients are integrated
        out against their flat prior instead of being plugged in at the GLS
        estimate; the two differ by ``p/2 log 2 pi - 1/2 log det(F^T K^-1 F)``.
        """
        n = self.n
        val = (-0.5 * self.resid_quad - np.log(np.diag(self.chol)).sum()
               - 0.5 * n * math.log(2 * math.pi))
        p = self.F.shape[1]
        if restricted and p:
            val += 0.5 * p * math.log(2 * math.pi) - np.log(np.diag(self.chol_w)).sum()
        return float(val)


def _cholesky_with_jitter(K, scale):
    n = K.shape[0]
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            if np.all(np.isfinite(L)):
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter *= 10.0
    try:
        cond = np.linalg.cond(K)
        w = np.linalg.eigvalsh(K)
        diag = f"condition number {cond:.3g}, eigenvalue range [{w[0]:.3g}, {w[-1]:.3g}]"
    except np.linalg.LinAlgError:
        diag = "matrix contains non-finite entries"
    raise CholeskyFailure(
        f"Gram matrix ({n}x{n}) not positive definite with jitter up to "
        f"{JITTER_MAX:g} x mean diagonal: {diag}")


def fit(model, X, z, noise=None):
    """Condition ``model`` on responses ``z`` observed at the rows of ``X``.

    ``noise`` holds the observation-noise variance of each response
    (zeros for a deterministic simulator).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    n = z.shape[0]
    if X.shape[0] != n:
        raise ValueError("X and z lengths differ")
    noise = np.zeros(n) if noise is None else np.asarray(noise, dtype=float).ravel()
    if noise.shape[0] != n:
        raise ValueError("noise and z lengths differ")
    if np.any(noise < 0):
        raise ValueError("noise variances must be >= 0")
    F = model.basis(X)
    p = F.shape[1]
    if n == 0:
        if p:
            raise ValueError("cannot condition an unknown-mean model on no data")
        e = np.zeros((0, 0))
        return PosteriorState(model, X, z, noise, e, 0.0, F, np.zeros(0),
                              np.zeros(0), np.zeros((0, 0)), e, 0.0)

    K = model.cov(X, X)
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        scale = 1.0
    K[np.diag_indices(n)] += noise
    L, jitter = _cholesky_with_jitter(K, scale)

    y = z - model.prior_mean(X)
    if p:
        KiF = cho_solve((L, True), F, check_finite=False)
        W = F.T @ KiF
        try:
            Lw = np.linalg.cholesky(W)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(
                "regression matrix F^T K^-1 F is singular: some mean "
                "coefficient is not identified by the data") from exc
        beta = cho_solve((Lw, True), KiF.T @ y, check_finite=False)
    else:
        KiF = np.zeros((n, 0))
        Lw = np.zeros((0, 0))
        beta = np.zeros(0)
    resid = y - F @ beta
    alpha = cho_solve((L, True), resid, check_finite=False)
    return PosteriorState(model, X, z, noise, L, jitter, F, beta, alpha, KiF, Lw,
                          float(resid @ alpha))


def posterior_mean_cov(state, q1, q2):
    """``(m_n(q1), k_n(q1, q2))`` for two single points."""
    P1 = state.project(np.atleast_2d(q1))
    P2 = state.project(np.atleast_2d(q2))
    return float(P1.mean[0]), float(state.cov_projected(P1, P2)[0, 0])


def log_marginal_likelihood(state, restricted=False):
    """Log marginal likelihood of ``state``; ``restricted`` integrates out flat-prior means."""
    return state.log_marginal_likelihood(restricted=restricted)
