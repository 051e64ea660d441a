"""Test problems: the Forrester pair, a random damped oscillator, a sampled GP."""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._accel import USE_NUMBA, njit
from .gp import MaternKernel, _cholesky_with_jitter
from .models import AdditiveModel, _level_indices, as_points

__all__ = [
    "forrester_lf",
    "forrester_hf",
    "OscillatorConfig",
    "AllZeroTrajectory",
    "expm_2x2",
    "exp_euler_trajectory",
    "oscillator_response",
    "oscillator_responses",
    "CostModel",
    "cost_eval",
    "ToyProblem",
    "toy_gp_sampler",
]


# --------------------------------------------------------------------------
# Forrester
# --------------------------------------------------------------------------


def forrester_lf(u):
    """Cheap Forrester approximation ``0.5 f_hf(u) + 10 (u - 0.5) - 5``."""
    u = np.asarray(u, dtype=float)
    return 0.5 * (6 * u - 2) ** 2 * np.sin(12 * u - 4) + 10 * (u - 0.5)


def forrester_hf(u):
    """Forrester function ``(6u - 2)^2 sin(12u - 4)`` on [0, 1]."""
    u = np.asarray(u, dtype=float)
    return (6 * u - 2) ** 2 * np.sin(12 * u - 4) + 10


# --------------------------------------------------------------------------
# damped oscillator
# --------------------------------------------------------------------------


class AllZeroTrajectory(ValueError):
    """Every displacement of the trajectory is exactly zero."""


@dataclass(frozen=True)
class OscillatorConfig:
    """Parameters of one oscillator simulation; ``n_steps = floor(t_end / delta)``."""
    omega0: float
    zeta: float
    delta: float
    t_end: float = 30.0
    S: float = 1.0
    z_crit: float = -3.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ValueError("omega0 must be > 0")
        if not self.zeta >= 0:
            raise ValueError("zeta must be >= 0")
        if not 0 < self.delta <= self.t_end:
            raise ValueError("need 0 < delta <= t_end")
        if not self.S >= 0:
            raise ValueError("S must be >= 0")

    @property
    def n_steps(self):
        # guard against 30 / (1/3) = 89.999...
        return int(math.floor(self.t_end / self.delta + 1e-9))


def _expm_2x2_py(omega0, zeta, delta):
    # M = A delta with A = [[0, 1], [-w^2, -2 zeta w]]
    m00, m01 = 0.0, delta
    m10, m11 = -omega0 * omega0 * delta, -2.0 * zeta * omega0 * delta
    half = 0.5 * (m00 + m11)
    q = half * half - (m00 * m11 - m01 * m10)
    if q > 0.0:
        s = math.sqrt(q)
        c, f = math.cosh(s), math.sinh(s) / s
    elif q < 0.0:
        s = math.sqrt(-q)
        c, f = math.cos(s), math.sin(s) / s
    else:
        c, f = 1.0, 1.0
    e = math.exp(half)
    out = np.empty((2, 2))
    out[0, 0] = e * (c + f * (m00 - half))
    out[0, 1] = e * f * m01
    out[1, 0] = e * f * m10
    out[1, 1] = e * (c + f * (m11 - half))
    return out


def expm_2x2(omega0, zeta, delta):
    """exp(A delta) for the oscillator drift matrix, in closed form.

    With tau = tr(M) and q = tau^2/4 - det(M) the exponential is
    e^{tau/2} [c I + f (M - tau/2 I)], where (c, f) is (cosh s, sinh s / s),
    (cos s, sin s / s) or (1, 1) for q > 0, q < 0 and q = 0, s = sqrt|q|.
    """
    return _expm_2x2_py(float(omega0), float(zeta), float(delta))


@njit
def _trajectories_nb(E, noise, x0, v0):
    n, K = noise.shape
    X = np.empty((n, K + 1))
    for i in range(n):
        x, v = x0, v0
        X[i, 0] = x
        for k in range(K):
            v += noise[i, k]
            x, v = E[0, 0] * x + E[0, 1] * v, E[1, 0] * x + E[1, 1] * v
            X[i, k + 1] = x
    return X


def _trajectories_np(E, noise, x0, v0):
    n, K = noise.shape
    X = np.empty((n, K + 1))
    x = np.full(n, float(x0))
    v = np.full(n, float(v0))
    X[:, 0] = x
    for k in range(K):
        v = v + noise[:, k]
        x, v = E[0, 0] * x + E[0, 1] * v, E[1, 0] * x + E[1, 1] * v
        X[:, k + 1] = x
    return X


def _noise(cfg, rng, n):
    K = cfg.n_steps
    return math.sqrt(2 * math.pi * cfg.S * cfg.delta) * rng.standard_normal((n, K))


def _simulate(cfg, noise, x0=(0.0, 0.0)):
    E = expm_2x2(cfg.omega0, cfg.zeta, cfg.delta)
    kernel = _trajectories_nb if USE_NUMBA else _trajectories_np
    return kernel(E, np.ascontiguousarray(noise), float(x0[0]), float(x0[1]))


def exp_euler_trajectory(cfg, seed=None, x0=(0.0, 0.0)):
    """Displacement and velocity at t_k = k delta, k = 0..K.

    Each step adds sqrt(2 pi S delta) U, U ~ N(0, 1), to the velocity and
    applies exp(A delta). Returns a (K + 1, 2) array starting at ``x0``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = _noise(cfg, rng, 1)
    E = expm_2x2(cfg.omega0, cfg.zeta, cfg.delta)
    K = cfg.n_steps
    out = np.empty((K + 1, 2))
    s = np.array(x0, dtype=float)
    out[0] = s
    for k in range(K):
        s[1] += noise[0, k]
        s = E @ s
        out[k + 1] = s
    return out


def _max_log_abs(X):
    with np.errstate(divide="ignore"):
        z = np.log(np.abs(X)).max(axis=1)
    if np.any(np.isneginf(z)):
        raise AllZeroTrajectory("every displacement of the trajectory is zero")
    return z


def oscillator_response(cfg, seed=None):
    """max_k log|X_k| over one simulated trajectory (zero states skipped)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return float(_max_log_abs(_simulate(cfg, _noise(cfg, rng, 1)))[0])


def oscillator_responses(cfg, n, seed=None):
    """``n`` independent responses at one configuration from one stream."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _max_log_abs(_simulate(cfg, _noise(cfg, rng, n)))


# --------------------------------------------------------------------------
# costs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Per-level cost table or affine cost ``a / delta + b``."""

    table: dict | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.table is not None:
            if any(not c > 0 for c in self.table.values()):
                raise ValueError("costs must be > 0")
        elif self.a is None or self.b is None:
            raise ValueError("need a table or affine coefficients")
        elif self.a < 0 or self.b < 0 or not self.a + self.b > 0:
            raise ValueError("affine coefficients must be >= 0, not both zero")

    @classmethod
    def from_table(cls, table):
        return cls(table={float(d): float(c) for d, c in table.items()})

    @classmethod
    def affine(cls, a, b):
        return cls(a=float(a), b=float(b))

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float)
        if self.table is not None:
            levels = np.array(list(self.table), dtype=float)
            vals = np.array(list(self.table.values()), dtype=float)
            out = vals[_level_indices(levels, d.ravel())].reshape(d.shape)
        else:
            if np.any(d <= 0):
                raise ValueError("delta must be > 0")
            out = self.a / d + self.b
        return float(out) if out.ndim == 0 else out


def cost_eval(cm, delta):
    """Cost of one evaluation at ``delta``."""
    return float(cm(float(delta)))


# --------------------------------------------------------------------------
# sampled GP toy problem
# --------------------------------------------------------------------------

TOY_LEVELS = (1.0, 0.5, 0.2, 0.1)
TOY_NOISE_SD = 0.4


def toy_model(mean=None):
    """Additive covariance of the sampled toy problem."""
    base = MaternKernel(1.0, 0.3, 2.5)
    return AdditiveModel(base, 0.1, 2.5, G=4.0, L=2.0, mean=mean)


@lru_cache(maxsize=8)
def _toy_factor(u_grid, deltas):
    X = as_points(np.repeat(u_grid, len(deltas)), np.tile(deltas, len(u_grid)))
    K = toy_model(mean=0.0).cov(X, X)
    L, _ = _cholesky_with_jitter(K, float(np.mean(np.diag(K))))
    return X, L


@dataclass(frozen=True, eq=False)
class ToyProblem:
    """One sampled path on a (u, delta) grid with a noisy observer."""

    X: np.ndarray
    values: np.ndarray
    u_grid: np.ndarray
    deltas: tuple
    noise_sd: float
    rng: np.random.Generator

    def xi(self, u, delta):
        """Path value at grid points (nearest grid u, exact delta)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        delta = np.broadcast_to(np.asarray(delta, dtype=float), u.shape)
        iu = np.abs(u[:, None] - self.u_grid[None, :]).argmin(axis=1)
        idelta = _level_indices(self.deltas, delta)
        return self.values[iu * len(self.deltas) + idelta]

    def observe(self, u, delta):
        v = self.xi(u, delta)
        return v + self.noise_sd * self.rng.standard_normal(v.shape)

    def truth(self):
        """Indicator of {xi(u, 0) > 0} on the u grid (needs 0 in ``deltas``)."""
        return (self.xi(self.u_grid, 0.0) > 0).astype(float)


def toy_gp_sampler(seed=None, n_u=101, deltas=TOY_LEVELS + (0.0,),
                   noise_sd=TOY_NOISE_SD):
    """Draw xi on a regular grid over [-0.5, 0.5] x ``deltas``.

    Mean 0, sigma0 = 1, G = 4, L = 2, nu = 5/2, lengthscales 0.3 and 0.1.
    Observations add N(0, noise_sd^2) noise.
    """
    u_grid = np.linspace(-0.5, 0.5, n_u)
    deltas = tuple(float(d) for d in deltas)
    X, L = _toy_factor(tuple(u_grid.tolist()), deltas)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    values = L @ rng.standard_normal(L.shape[0])
    return ToyProblem(X, values, u_grid, deltas, float(noise_sd), rng)
