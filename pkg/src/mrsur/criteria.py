"""Excursion-probability SUR criteria and the gain-per-cost selection rule.

The quantity of interest is alpha(x) = P(Z_x > z_crit) = Phi((xi(x) - z_crit)
/ sqrt(lambda(x))) and the residual uncertainty is the integrated posterior
variance of alpha over a weighted node set. Everything reduces to bivariate
normal CDFs evaluated on the diagonal, with

    a_n = (m_n - z_crit) / sqrt(v_n),   v_n = k_n(x, x) + lambda(x),
    r_n = k_n(x, x) / v_n,              r~_n = nu_n(x, x; batch) / v_n.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .gp import JITTER_MAX, JITTER_START, fit
from .special import bvn_cdf, normal_cdf

__all__ = [
    "DegenerateVariance",
    "SingularBatch",
    "EmptyCandidates",
    "IntegrationNodes",
    "CandidateBatch",
    "CriterionField",
    "SurContext",
    "excursion_prob",
    "uncertainty_H",
    "sur_J",
    "gain_G",
    "mrsur_select",
    "pareto_front",
]

_CHUNK = 256


class DegenerateVariance(ValueError):
    """Predictive variance k_n(x, x) + lambda(x) is not positive."""


class SingularBatch(np.linalg.LinAlgError):
    """K_n(batch, batch) could not be factorised even with jitter."""


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class IntegrationNodes:
    """Weighted nodes representing the integration measure mu."""

    X: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if X.shape[0] != w.shape[0]:
            raise ValueError("one weight per node")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be >= 0 with positive sum")
        if not np.all(np.isfinite(X)):
            raise ValueError("nodes must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, U, delta):
        """Equal weights 1/N on the design points ``U`` at level ``delta``."""
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        X = np.column_stack([U, np.full(U.shape[0], float(delta))])
        return cls(X, np.full(U.shape[0], 1.0 / U.shape[0]))

    @classmethod
    def monte_carlo(cls, lower, upper, n, delta, rng):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        U = lower + (upper - lower) * rng.random((n, lower.shape[0]))
        return cls.uniform(U, delta)

    @classmethod
    def grid(cls, lower, upper, per_dim, delta):
        """Cell-centred regular grid, ``per_dim`` points per coordinate."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        axes = [lo + (hi - lo) * (np.arange(per_dim) + 0.5) / per_dim
                for lo, hi in zip(lower, upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls.uniform(np.column_stack([m.ravel() for m in mesh]), delta)


@dataclass(frozen=True)
class CandidateBatch:
    """Points evaluated together and their total cost."""
    points: np.ndarray
    cost: float

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ValueError("a batch needs at least one point")
        if not self.cost > 0:
            raise ValueError("cost must be > 0")
        object.__setattr__(self, "points", pts)


class SurContext:
    """Node-side quantities shared by every candidate at one design step."""

    def __init__(self, state, noise, z_crit, nodes):
        self.state = state
        self.noise = noise
        self.z_crit = float(z_crit)
        self.nodes = nodes
        P = state.project(nodes.X)
        self.proj = P
        self.mean = P.mean
        self.k = state.var_projected(P)
        self.lam = noise(nodes.X)
        v = self.k + self.lam
        ok = v > 0
        self.ok = ok
        vs = np.where(ok, v, 1.0)
        self.v = np.where(ok, v, 0.0)
        # zero predictive variance: the exceedance indicator is known
        known = np.where(self.mean >= self.z_crit, np.inf, -np.inf)
        self.a = np.where(ok, (self.mean - self.z_crit) / np.sqrt(vs), known)
        self.r = np.where(ok, np.clip(self.k / vs, 0.0, 1.0), 0.0)
        self.phi = normal_cdf(self.a)
        self.p2r = bvn_cdf(self.a, self.a, self.r)
        w = nodes.weights
        self.w = w
        self._sum_p2r = float(w @ self.p2r)
        self._sum_phi2 = float(w @ self.phi ** 2)
        self.H = float(w @ (self.p2r - self.phi ** 2))

    def excursion(self):
        """Posterior mean of alpha at the nodes."""
        return self.phi

    def _from_rtilde(self, rt):
        rt = np.clip(rt, 0.0, self.r)
        s = bvn_cdf(self.a, self.a, rt) @ self.w
        return self._sum_p2r - s, s - self._sum_phi2

    def single(self, C, extra=None):
        """(J, G) for every row of ``C`` taken as a one-point batch.

        ``extra`` optionally holds points already committed to the batch;
        the returned values are then those of ``extra + [c]``.
        """
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if extra is not None and len(extra):
            extra = np.atleast_2d(extra)
            st = self.state
            aug = fit(st.model, np.vstack([st.X, extra]),
                      np.concatenate([st.z, np.zeros(extra.shape[0])]),
                      np.concatenate([st.noise, self.noise(extra)]))
            Pn = aug.project(self.nodes.X)
            nu_base = np.clip(self.k - aug.var_projected(Pn), 0.0, None)
        else:
            aug, Pn, nu_base = self.state, self.proj, np.zeros_like(self.k)
        lam_c = self.noise(C)
        J = np.empty(C.shape[0])
        G = np.empty(C.shape[0])
        vsafe = np.where(self.ok, self.v, np.inf)
        for lo in range(0, C.shape[0], _CHUNK):
            Pc = aug.project(C[lo:lo + _CHUNK])
            kcn = aug.cov_projected(Pc, Pn)
            vc = aug.var_projected(Pc) + lam_c[lo:lo + _CHUNK]
            good = vc > 0
            vc = np.where(good, vc, np.inf)
            rt = (nu_base[None, :] + kcn ** 2 / vc[:, None]) / vsafe[None, :]
            rt = np.clip(rt, 0.0, self.r[None, :])
            s = bvn_cdf(self.a[None, :], self.a[None, :], rt) @ self.w
            J[lo:lo + _CHUNK] = self._sum_p2r - s
            G[lo:lo + _CHUNK] = s - self._sum_phi2
        return J, G

    def nu(self, batch_points):
        """nu_n(x, x; batch) at every node."""
        B = np.atleast_2d(np.asarray(batch_points, dtype=float))
        Pb = self.state.project(B)
        Kb = self.state.cov_projected(Pb, Pb) + np.diag(self.noise(B))
        kbx = self.state.cov_projected(Pb, self.proj)
        Lb = _batch_cholesky(Kb)
        T = np.linalg.solve(Lb, kbx)
        return np.einsum("ij,ij->j", T, T)

    def batch(self, batch_points):
        """(J, G) for one batch through the general q-point formula."""
        nu = self.nu(batch_points)
        rt = np.where(self.ok, nu / np.where(self.ok, self.v, 1.0), 0.0)
        return self._from_rtilde(rt)


def _batch_cholesky(K):
    q = K.shape[0]
    scale = float(np.mean(np.abs(np.diag(K))))
    if not scale > 0:
        raise SingularBatch("batch covariance is identically zero")
    # q is small and the criterion is sensitive near r = 1, so try the
    # exact factor before adding any jitter
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(q))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SingularBatch(f"K_n(batch, batch) ({q}x{q}) is singular")


# --------------------------------------------------------------------------
# functional API
# --------------------------------------------------------------------------


def excursion_prob(state, noise, z_crit, x):
    """Posterior mean Phi(a_n(x)) of the exceedance probability."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    m, k = state.predict(X)
    v = k + noise(X)
    if np.any(v <= 0):
        raise DegenerateVariance("k_n(x, x) + lambda(x) <= 0")
    p = normal_cdf((m - z_crit) / np.sqrt(v))
    return float(p[0]) if np.ndim(x) == 1 else p


def uncertainty_H(state, noise, z_crit, mu):
    """Integrated posterior variance of the exceedance probability.

    Parameters
    ----------
    state : PosteriorState
        Fitted posterior (see ``mrsur.gp.fit``).
    noise : callable
        Maps an ``(n, d + 1)`` point array to observation variances.
    z_crit : float
        Exceedance threshold.
    mu : IntegrationNodes
        Weighted nodes for the integral.

    Returns
    -------
    float
        ``sum_i w_i (Phi_2(a_i, a_i; r_i) - Phi(a_i)^2)``.
    """
    return SurContext(state, noise, z_crit, mu).H


def _batch_points(batch):
    return batch.points if isinstance(batch, CandidateBatch) else np.atleast_2d(batch)


def sur_J(state, noise, z_crit, batch, mu):
    """Expected uncertainty after observing ``batch``.

    ``batch`` is a ``CandidateBatch`` or a ``(q, d + 1)`` array. The other
    arguments are as in ``uncertainty_H``. Raises ``SingularBatch`` when the
    batch covariance cannot be factorised even with jitter.
    """
    return SurContext(state, noise, z_crit, mu).batch(_batch_points(batch))[0]


def gain_G(state, noise, z_crit, batch, mu):
    """Expected reduction ``H - J`` for ``batch``, computed without cancellation."""
    return SurContext(state, noise, z_crit, mu).batch(_batch_points(batch))[1]


# --------------------------------------------------------------------------
# selection
# --------------------------------------------------------------------------


def pareto_front(cost, J):
    """Indices not dominated in (cost, J), both minimised; sorted by cost."""
    cost = np.asarray(cost, dtype=float)
    J = np.asarray(J, dtype=float)
    if cost.size == 0:
        raise ValueError("pareto_front needs at least one record")
    order = np.lexsort((np.arange(cost.size), J, cost))
    front = []
    best = np.inf
    i = 0
    while i < order.size:
        j = i
        c = cost[order[i]]
        while j < order.size and cost[order[j]] == c:
            j += 1
        group = order[i:j]
        gmin = J[group].min()
        if gmin < best:
            front.extend(int(g) for g in group if J[g] == gmin)
            best = gmin
        i = j
    return np.array(front, dtype=int)


@dataclass
class CriterionField:
    """Criterion values over a candidate set (one-point or q-point batches)."""

    points: np.ndarray      # (nc, q, d + 1)
    cost: np.ndarray
    J: np.ndarray
    G: np.ndarray
    H: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 2:
            self.points = self.points[:, None, :]
        self.cost = np.asarray(self.cost, dtype=float)
        self.J = np.asarray(self.J, dtype=float)
        self.G = np.asarray(self.G, dtype=float)

    @property
    def rate(self):
        return self.G / self.cost

    @property
    def pareto(self):
        return pareto_front(self.cost, self.J)

    @property
    def best(self):
        return _argmax_rate(self.G, self.cost, self.points)

    def to_csv(self, path):
        nc, q, dd = self.points.shape
        d = dd - 1
        if q == 1:
            ucols = [f"u{k + 1}" for k in range(d)]
        else:
            ucols = [f"u{k + 1}_{l + 1}" for l in range(q) for k in range(d)]
        on_front = np.zeros(nc, dtype=bool)
        if nc:
            on_front[self.pareto] = True
        rate = self.rate
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ucols + ["delta", "cost", "J", "G", "rate", "on_pareto"])
            for i in range(nc):
                us = [repr(float(v)) for v in self.points[i, :, :-1].ravel()]
                w.writerow(us + [repr(float(self.points[i, 0, -1])),
                                 repr(float(self.cost[i])), repr(float(self.J[i])),
                                 repr(float(self.G[i])), repr(float(rate[i])),
                                 int(on_front[i])])


def _argmax_rate(G, cost, points):
    """Largest G/C; ties go to the lower cost, then lexicographic point order."""
    if len(G) == 0:
        raise EmptyCandidates("no candidates to select from")
    cost = np.asarray(cost, dtype=float)
    if np.any(cost <= 0):
        raise ValueError("costs must be > 0")
    rate = np.asarray(G, dtype=float) / cost
    flat = np.asarray(points, dtype=float).reshape(len(G), -1)
    keys = [flat[:, j] for j in range(flat.shape[1] - 1, -1, -1)]
    return int(np.lexsort(keys + [cost, -rate])[0])


def mrsur_select(points, G, cost, J=None, H=None):
    """Pick the candidate with maximal expected gain per unit cost.

    Returns ``(index, CriterionField)``.
    """
    G = np.asarray(G, dtype=float)
    cost = np.broadcast_to(np.asarray(cost, dtype=float), G.shape).copy()
    if H is None:
        H = float("nan")
    if J is None:
        J = H - G
    field = CriterionField(points, cost, J, G, H)
    return field.best, field
