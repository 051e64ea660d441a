"""Hyperparameter priors, log-posterior, adaptive Metropolis and MAP estimation.

Positive parameters are handled in the log domain: the sampler moves on
``log x`` and a :class:`LogNormal` prior is a normal density on ``log x``.
Posterior modes are therefore modes in the sampling coordinates.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .gp import CholeskyFailure, MaternKernel, fit
from .models import ARModel, AdditiveModel, NoiseModel, UnknownLevel

__all__ = [
    "Normal",
    "LogNormal",
    "Flat",
    "InitInvalid",
    "Chain",
    "ARFamily",
    "AdditiveFamily",
    "LogNormalNoisePrior",
    "log_posterior",
    "adaptive_mh",
    "map_estimate",
]

_LOG_2PI = math.log(2 * math.pi)


class InitInvalid(ValueError):
    """The starting point of a chain has a non-finite log-posterior."""


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    log_domain = False

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be > 0")

    def logpdf(self, t):
        return -0.5 * ((t - self.mean) / self.sd) ** 2 - math.log(self.sd) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class LogNormal:
    """``log x ~ N(location, scale^2)``; ``logpdf`` takes ``t = log x``."""

    location: float
    scale: float

    log_domain = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    def logpdf(self, t):
        return (-0.5 * ((t - self.location) / self.scale) ** 2 - math.log(self.scale)
                - 0.5 * _LOG_2PI)


@dataclass(frozen=True)
class Flat:
    positive: bool = False

    @property
    def log_domain(self):
        return self.positive

    def logpdf(self, t):
        return 0.0


# --------------------------------------------------------------------------
# parameter families
# --------------------------------------------------------------------------


class _Family:
    """A named parameter vector, its priors and a model builder.

    Subclasses set ``names`` and ``priors`` (a dict name -> prior) and
    implement ``build(values) -> (model, noise_model)``.
    """

    names: tuple
    priors: dict

    @property
    def dim(self):
        return len(self.names)

    def as_dict(self, params):
        if isinstance(params, dict):
            return {n: float(params[n]) for n in self.names}
        params = np.asarray(params, dtype=float).ravel()
        if params.shape[0] != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {params.shape[0]}")
        return dict(zip(self.names, params.tolist()))

    def to_theta(self, params):
        """Natural values to sampling coordinates (log for positive ones)."""
        values = self.as_dict(params)
        out = np.empty(self.dim)
        for i, n in enumerate(self.names):
            v = values[n]
            out[i] = math.log(v) if self.priors[n].log_domain else v
        return out

    def from_theta(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        return {n: (math.exp(t) if self.priors[n].log_domain else float(t))
                for n, t in zip(self.names, theta)}

    def log_prior(self, values):
        """Prior log-density in sampling coordinates; -inf outside the support."""
        total = 0.0
        for n in self.names:
            v = values[n]
            if not math.isfinite(v):
                return -math.inf
            prior = self.priors[n]
            if prior.log_domain:
                if not v > 0:
                    return -math.inf
                v = math.log(v)
            total += prior.logpdf(v)
        return total + self._joint_log_prior(values)

    def _joint_log_prior(self, values):
        return 0.0

    def log_target(self, X, z):
        """Log-posterior as a function of the sampling coordinates."""
        return lambda theta: log_posterior(self.from_theta(theta), X, z, self)


def _rate_names(prefix, dim):
    return [prefix] if dim == 1 else [f"{prefix}_{k + 1}" for k in range(dim)]


class ARFamily(_Family):
    """Autoregressive model with unknown constant means (flat prior).

    Parameters: ``sigma2_s``, inverse lengthscales ``a_s`` (or ``a_s_k`` per
    dimension) for each level ``s = 1..S`` and coefficients ``rho_s`` for
    ``s = 1..S-1``. Default priors: ``log sigma2 ~ N(2 log 0.2, log(100)^2)``,
    ``log a ~ N(log 2, log(10)^2)``, ``rho ~ N(1, 2^2)``.
    """

    def __init__(self, levels, dim=1, nu=2.5, noise=None, priors=None):
        self.levels = tuple(float(d) for d in levels)
        self.input_dim = int(dim)
        self.nu = nu
        self.noise = noise if noise is not None else NoiseModel.deterministic(self.levels)
        S = len(self.levels)
        names, pri = [], {}
        for s in range(1, S + 1):
            names.append(f"sigma2_{s}")
            pri[f"sigma2_{s}"] = LogNormal(2 * math.log(0.2), math.log(100))
            for n in _rate_names(f"a_{s}", self.input_dim):
                names.append(n)
                pri[n] = LogNormal(math.log(2), math.log(10))
        for s in range(1, S):
            names.append(f"rho_{s}")
            pri[f"rho_{s}"] = Normal(1.0, 2.0)
        pri.update(priors or {})
        self.names = tuple(names)
        self.priors = pri

    def build(self, values):
        S = len(self.levels)
        kernels = []
        for s in range(1, S + 1):
            rates = np.array([values[n] for n in _rate_names(f"a_{s}", self.input_dim)])
            kernels.append(MaternKernel(values[f"sigma2_{s}"], 1.0 / rates, self.nu))
        rhos = tuple(values[f"rho_{s}"] for s in range(1, S))
        return ARModel(self.levels, tuple(kernels), rhos), self.noise


@dataclass(frozen=True)
class LogNormalNoisePrior:
    """Joint prior on level variances: ``log lambda ~ N(mu, Sigma)``.

    ``Sigma_ij = scale^2 exp(-|log delta_i - log delta_j| / corr_length)``.
    ``mu`` is either a scalar or one value per level.
    """

    levels: tuple
    location: object
    scale: float = math.log(10)
    corr_length: float = 1.0

    @property
    def mu(self):
        return np.broadcast_to(np.asarray(self.location, dtype=float),
                               (len(self.levels),)).copy()

    @property
    def cov(self):
        ld = np.log(np.asarray(self.levels, dtype=float))
        return self.scale ** 2 * np.exp(-np.abs(ld[:, None] - ld[None, :])
                                        / self.corr_length)

    def split(self, sampled):
        """Marginal of the sampled levels and the conditional-mean map."""
        idx = np.asarray(sampled, dtype=int)
        rest = np.setdiff1d(np.arange(len(self.levels)), idx)
        mu, C = self.mu, self.cov
        Caa = C[np.ix_(idx, idx)]
        Cra = C[np.ix_(rest, idx)]
        gain = np.linalg.solve(Caa, Cra.T).T if idx.size else np.zeros((rest.size, 0))
        return idx, rest, mu[idx], Caa, gain


class AdditiveFamily(_Family):
    """Additive model with a flat-prior constant mean and level-wise noise.

    Parameters: ``sigma2``, inverse lengthscales ``a0`` (base) and ``aeps``
    (error), ``G``, ``L`` and ``lam_i`` for each level index ``i`` in
    ``sampled``. Variances at the other levels are set to their conditional
    prior mean given the sampled ones. ``noise_prior=None`` makes the
    simulator deterministic. Fixed values can be given in ``fixed``.
    """

    def __init__(self, levels, dim, priors=None, noise_prior=None, sampled=None,
                 fixed=None, nu=2.5, err_nu=2.5):
        self.levels = tuple(float(d) for d in levels)
        self.input_dim = int(dim)
        self.nu, self.err_nu = nu, err_nu
        self.noise_prior = noise_prior
        self.fixed = dict(fixed or {})
        names, pri = ["sigma2"], {"sigma2": LogNormal(0.0, math.log(10))}
        for n in _rate_names("a0", self.input_dim) + _rate_names("aeps", self.input_dim):
            names.append(n)
            pri[n] = LogNormal(math.log(2), math.log(10))
        names += ["G", "L"]
        pri["G"] = LogNormal(0.0, math.log(10))
        pri["L"] = LogNormal(0.0, 0.5)
        if noise_prior is not None:
            sampled = range(len(self.levels)) if sampled is None else sampled
            self.sampled = tuple(sorted(int(i) for i in sampled))
            for i in self.sampled:
                names.append(f"lam_{i}")
                pri[f"lam_{i}"] = Flat(positive=True)
            self._noise_split = noise_prior.split(self.sampled)
        else:
            self.sampled = ()
        pri.update(priors or {})
        self.names = tuple(n for n in names if n not in self.fixed)
        self.priors = pri

    def with_sampled(self, sampled):
        return AdditiveFamily(self.levels, self.input_dim, self.priors, self.noise_prior,
                              sampled, self.fixed, self.nu, self.err_nu)

    def _joint_log_prior(self, values):
        if self.noise_prior is None or not self.sampled:
            return 0.0
        _, _, mu, C, _ = self._noise_split
        t = np.log([values[f"lam_{i}"] for i in self.sampled]) - mu
        L = np.linalg.cholesky(C)
        y = np.linalg.solve(L, t)
        return float(-0.5 * y @ y - np.log(np.diag(L)).sum() - 0.5 * len(t) * _LOG_2PI)

    def noise_variances(self, values):
        lam = np.empty(len(self.levels))
        if self.noise_prior is None:
            lam[:] = 0.0
            return lam
        idx, rest, mu_a, _, gain = self._noise_split
        la = np.log([values[f"lam_{i}"] for i in self.sampled])
        lam[idx] = np.exp(la)
        lam[rest] = np.exp(self.noise_prior.mu[rest] + gain @ (la - mu_a))
        return lam

    def build(self, values):
        values = {**self.fixed, **values}
        a0 = np.array([values[n] for n in _rate_names("a0", self.input_dim)])
        ae = np.array([values[n] for n in _rate_names("aeps", self.input_dim)])
        model = AdditiveModel(MaternKernel(values["sigma2"], 1.0 / a0, self.nu),
                              1.0 / ae, self.err_nu, values["G"], values["L"])
        lam = self.noise_variances(values)
        return model, NoiseModel(dict(zip(self.levels, lam.tolist())))


# --------------------------------------------------------------------------
# posterior
# --------------------------------------------------------------------------


def log_posterior(params, X, z, family):
    """Restricted log marginal likelihood plus the log prior.

    Flat-prior regression means are integrated out. Returns ``-inf`` outside
    the prior support or when the Gram matrix cannot be factorised.
    """
    values = family.as_dict(params)
    lp = family.log_prior(values)
    if not math.isfinite(lp):
        return -math.inf
    try:
        model, noise = family.build(values)
        state = fit(model, X, z, noise(X))
    except (CholeskyFailure, UnknownLevel, ValueError, FloatingPointError):
        return -math.inf
    ll = state.log_marginal_likelihood(restricted=True)
    return ll + lp if math.isfinite(ll) else -math.inf


@dataclass(eq=False)
class Chain:
    """Samples (initial point first) and their log-posterior values."""

    samples: np.ndarray
    logp: np.ndarray
    proposal_cov: np.ndarray
    acceptance: float
    names: tuple = field(default=())

    @property
    def best(self):
        i = int(np.argmax(self.logp))
        return self.samples[i].copy(), float(self.logp[i])

    def to_csv(self, path):
        names = self.names or tuple(f"p{k + 1}" for k in range(self.samples.shape[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "log_posterior", *names])
            for i, (row, lp) in enumerate(zip(self.samples, self.logp)):
                w.writerow([i, repr(float(lp))] + [repr(float(v)) for v in row])


def adaptive_mh(log_post, init, n_iter, seed=None, init_cov=None, warmup=None,
                eps=1e-8, names=()):
    """Adaptive random-walk Metropolis (Haario, Saksman and Tamminen, 2001).

    The Gaussian proposal uses ``init_cov`` (default ``0.01 I``) for the
    first ``warmup`` steps, then ``2.38^2 / d (Cov_t + eps I)`` where
    ``Cov_t`` is the running covariance of all states so far.
    The returned chain has ``n_iter + 1`` rows, the first being ``init``.
    """
    x = np.array(init, dtype=float).ravel()
    d = x.shape[0]
    lp = float(log_post(x))
    if not math.isfinite(lp):
        raise InitInvalid(f"log posterior at the initial point is {lp}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    C0 = 0.01 * np.eye(d) if init_cov is None else np.atleast_2d(np.asarray(init_cov, float))
    warmup = max(2 * d, 100) if warmup is None else int(warmup)
    sd = 2.38 ** 2 / d

    samples = np.empty((n_iter + 1, d))
    logp = np.empty(n_iter + 1)
    samples[0], logp[0] = x, lp
    mean = x.copy()
    M2 = np.zeros((d, d))
    accepted = 0
    cov = C0
    L = np.linalg.cholesky(C0)
    for t in range(1, n_iter + 1):
        if t > warmup:
            cov = sd * (M2 / (t - 1) + eps * np.eye(d))
            L = np.linalg.cholesky(cov)
        y = x + L @ rng.standard_normal(d)
        lpy = float(log_post(y))
        if math.isfinite(lpy) and math.log(rng.random()) < lpy - lp:
            x, lp = y, lpy
            accepted += 1
        samples[t], logp[t] = x, lp
        # Welford update of the running mean and scatter over t + 1 states
        delta = x - mean
        mean += delta / (t + 1)
        M2 += np.outer(delta, x - mean)
    return Chain(samples, logp, cov, accepted / n_iter if n_iter else 0.0, tuple(names))


def map_estimate(chain, log_post, xatol=1e-10, fatol=1e-12, maxiter=None):
    """Nelder-Mead ascent from the best chain sample.

    The result is never worse than the starting sample, which is returned
    unchanged unless the search strictly improves on it.
    """
    x0, f0 = chain.best

    def neg(x):
        v = log_post(x)
        return -v if math.isfinite(v) else math.inf

    d = x0.shape[0]
    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": fatol,
                            "maxiter": maxiter or 400 * d, "maxfev": maxiter or 800 * d,
                            "adaptive": d > 3})
    x = np.asarray(res.x, dtype=float)
    fx = -float(res.fun)
    if fx > f0 and math.isfinite(fx):
        return x, fx
    return x0, f0
