"""Multi-fidelity GP priors over X = U x T and the level-keyed noise model.

Points are stored as rows of a float array: the design coordinates ``u``
first, the fidelity parameter ``delta`` in the last column.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .gp import MaternKernel, matern_corr

__all__ = [
    "Point",
    "UnknownLevel",
    "as_points",
    "split",
    "ARModel",
    "AdditiveModel",
    "NoiseModel",
    "ar_cov",
    "ar_mean",
    "additive_cov",
    "noise_at",
]


class UnknownLevel(LookupError):
    """A fidelity value that is not one of the registered levels."""


class Point(NamedTuple):
    """Input ``u`` paired with a fidelity parameter ``delta``."""
    u: tuple
    delta: float

    def as_row(self):
        return np.append(np.asarray(self.u, dtype=float).ravel(), float(self.delta))


def as_points(u, delta):
    """Stack design coordinates and fidelity values into point rows."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (u.shape[0],))
    return np.column_stack([u, delta])


def split(X):
    """Split ``(n, d + 1)`` rows into ``(U, delta)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, :-1], X[:, -1]


def _level_indices(levels, delta):
    levels = np.asarray(levels, dtype=float)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    exact = delta[:, None] == levels[None, :]
    if exact.any(axis=1).all():
        return exact.argmax(axis=1)
    close = np.isclose(delta[:, None], levels[None, :], rtol=1e-9, atol=1e-12)
    hit = close.any(axis=1)
    if not hit.all():
        bad = np.unique(delta[~hit])
        raise UnknownLevel(f"fidelity value(s) {bad.tolist()} not in levels "
                           f"{levels.tolist()}")
    return close.argmax(axis=1)


@dataclass(frozen=True)
class ARModel:
    """Autoregressive prior: xi_s = rho_{s-1} xi_{s-1} + eta_s.

    ``levels`` are ordered from lowest to highest fidelity. ``means=None``
    leaves the per-level constant means unknown (flat prior), in which case
    they enter through ``basis``.
    """

    levels: tuple
    kernels: tuple
    rhos: tuple
    means: tuple | None = None

    def __post_init__(self):
        S = len(self.levels)
        if S < 2:
            raise ValueError("the autoregressive model needs at least two levels")
        if len(self.kernels) != S or len(self.rhos) != S - 1:
            raise ValueError("need one kernel per level and S-1 coefficients")
        if self.means is not None and len(self.means) != S:
            raise ValueError("need one mean per level")

    @property
    def coef(self):
        """C[i, s] = prod_{j=i}^{s-1} rho_j for i <= s, else 0."""
        S = len(self.levels)
        C = np.zeros((S, S))
        for s in range(S):
            C[s, s] = 1.0
            for i in range(s - 1, -1, -1):
                C[i, s] = C[i + 1, s] * self.rhos[i]
        return C

    def level_index(self, delta):
        return _level_indices(self.levels, delta)

    def cov(self, X1, X2):
        U1, d1 = split(X1)
        U2, d2 = split(X2)
        s1, s2 = self.level_index(d1), self.level_index(d2)
        C = self.coef
        out = np.zeros((U1.shape[0], U2.shape[0]))
        for i, k in enumerate(self.kernels):
            c1, c2 = C[i, s1], C[i, s2]
            if not (c1.any() and c2.any()):
                continue
            out += np.outer(c1, c2) * k(U1, U2)
        return out

    def diag(self, X):
        _, d = split(X)
        C = self.coef[:, self.level_index(d)]
        var = np.array([k.variance for k in self.kernels])
        return (C ** 2 * var[:, None]).sum(axis=0)

    def basis(self, X):
        _, d = split(X)
        if self.means is not None:
            return np.empty((d.shape[0], 0))
        return self.coef[:, self.level_index(d)].T

    def prior_mean(self, X):
        _, d = split(X)
        if self.means is None:
            return np.zeros(d.shape[0])
        return self.coef[:, self.level_index(d)].T @ np.asarray(self.means, dtype=float)


def brownian_r(exponent):
    """Fidelity factor ``r(d, d') = min(d, d')^exponent``."""
    return lambda d1, d2: np.minimum(d1[:, None], d2[None, :]) ** exponent


@dataclass(frozen=True)
class AdditiveModel:
    """xi(u, delta) = xi_0(u) + eps(u, delta), with separable error covariance.

    cov = s2 M_nu0(|u-u'|/rho0) + s2 G r(delta, delta') M_nu_eps(|u-u'|/rho_eps)
    and by default r(delta, delta') = min(delta, delta')^L. Pass
    ``r_func(d1, d2) -> matrix`` to use another fidelity covariance.
    """

    base: MaternKernel
    err_lengthscale: object
    err_nu: float = 2.5
    G: float = 1.0
    L: float = 1.0
    mean: float | None = None
    r_func: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.G < 0:
            raise ValueError("G must be >= 0")
        if not self.L > 0:
            raise ValueError("L must be > 0")

    def r(self, d1, d2):
        d1 = np.atleast_1d(np.asarray(d1, dtype=float))
        d2 = np.atleast_1d(np.asarray(d2, dtype=float))
        if self.r_func is not None:
            return self.r_func(d1, d2)
        return brownian_r(self.L)(d1, d2)

    def cov(self, X1, X2):
        U1, d1 = split(X1)
        U2, d2 = split(X2)
        if np.any(d1 < 0) or np.any(d2 < 0):
            raise ValueError("fidelity parameter must be >= 0")
        out = self.base(U1, U2)
        if self.G > 0:
            err = matern_corr(U1, U2, self.err_lengthscale, self.err_nu)
            out += self.base.variance * self.G * self.r(d1, d2) * err
        return out

    def diag(self, X):
        _, d = split(X)
        rd = np.diagonal(self.r(d, d)) if self.r_func is not None else d ** self.L
        return self.base.variance * (1.0 + self.G * rd)

    def basis(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.ones((n, 1)) if self.mean is None else np.empty((n, 0))

    def prior_mean(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.zeros(n) if self.mean is None else np.full(n, float(self.mean))


@dataclass(frozen=True)
class NoiseModel:
    """Observation-noise variance keyed by fidelity level."""

    variances: dict

    def __post_init__(self):
        if any(v < 0 for v in self.variances.values()):
            raise ValueError("noise variances must be >= 0")

    @classmethod
    def constant(cls, levels, value):
        return cls({float(d): float(value) for d in levels})

    @classmethod
    def deterministic(cls, levels):
        return cls.constant(levels, 0.0)

    @property
    def levels(self):
        return tuple(self.variances)

    def __call__(self, X):
        _, d = split(X)
        levels = np.array(list(self.variances), dtype=float)
        vals = np.array(list(self.variances.values()), dtype=float)
        return vals[_level_indices(levels, d)]


def _row(x):
    if isinstance(x, Point):
        return x.as_row()[None, :]
    return np.atleast_2d(np.asarray(x, dtype=float))


def ar_cov(model, x, x2):
    """Scalar prior covariance between two points under an autoregressive model."""
    return float(model.cov(_row(x), _row(x2))[0, 0])


def ar_mean(model, x):
    """Scalar prior mean at one point; needs known means."""
    if model.means is None:
        raise ValueError("model has unknown means")
    return float(model.prior_mean(_row(x))[0])


def additive_cov(model, x, x2):
    """Scalar prior covariance between two points under an additive model."""
    return float(model.cov(_row(x), _row(x2))[0, 0])


def noise_at(noise, x):
    """Observation variance at one point."""
    return float(noise(_row(x))[0])
