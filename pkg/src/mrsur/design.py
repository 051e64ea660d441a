"""Nested Latin hypercube designs and the grid + local criterion optimiser."""
import csv
from dataclasses import dataclass

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "InvalidSizes",
    "NestedDesign",
    "nlhs",
    "maximin_improve",
    "optimize_criterion",
    "is_nested",
    "is_lhs",
]

_EPS = 1e-9
_PHI_P = 20.0


class InvalidSizes(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NestedDesign:
    """Nested design on [0, 1]^d.

    Rows are ordered so that level ``s`` is ``points[:sizes[s]]``; level 0
    is the lowest fidelity and holds the most points.
    """

    points: np.ndarray
    sizes: tuple

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def levels(self):
        return [self.points[:n].copy() for n in self.sizes]

    def scaled(self, lower, upper):
        """Per-level point sets mapped affinely onto the box [lower, upper]."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return [lower + (upper - lower) * P for P in self.levels]

    def to_csv(self, path, deltas=None, lower=None, upper=None):
        deltas = list(deltas) if deltas is not None else list(range(len(self.sizes)))
        if lower is None:
            levels = self.levels
        else:
            levels = self.scaled(lower, upper)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "delta"] + [f"u{k + 1}" for k in range(self.dim)])
            for s, P in enumerate(levels):
                for row in P:
                    w.writerow([s, repr(float(deltas[s]))] + [repr(float(v)) for v in row])


def _check_sizes(sizes):
    sizes = tuple(int(n) for n in sizes)
    if not sizes or any(n < 1 for n in sizes):
        raise InvalidSizes(f"sizes must be positive integers, got {sizes}")
    for a, b in zip(sizes, sizes[1:]):
        if b > a:
            raise InvalidSizes(f"sizes must be nonincreasing, got {sizes}")
        if a % b:
            raise InvalidSizes(f"each size must be a multiple of the next, got {sizes}")
    return sizes


def _strata(x, n):
    return np.floor(x * n).astype(int)


def nlhs(sizes, dim, seed=None, maximin_iters=None):
    """Nested Latin hypercube sample on [0, 1]^dim.

    The smallest (highest-fidelity) level is drawn first as an ordinary LHS;
    each lower level then adds points whose coordinates fill, in every
    dimension, the strata left empty by the points already placed. This
    needs every size to be a multiple of the next one. A maximin pass
    follows unless ``maximin_iters == 0``.
    """
    sizes = _check_sizes(sizes)
    rng = np.random.default_rng(seed)
    n = sizes[-1]
    cols = [rng.permutation(n) for _ in range(dim)]
    P = (np.column_stack(cols) + rng.uniform(_EPS, 1 - _EPS, (n, dim))) / n
    for ns in reversed(sizes[:-1]):
        m = ns - P.shape[0]
        if m == 0:
            continue
        new = np.empty((m, dim))
        for k in range(dim):
            free = np.setdiff1d(np.arange(ns), _strata(P[:, k], ns))
            new[:, k] = (rng.permutation(free) + rng.uniform(_EPS, 1 - _EPS, m)) / ns
        P = np.vstack([P, new])
    design = NestedDesign(P, sizes)
    return maximin_improve(design, maximin_iters, rng)


# --------------------------------------------------------------------------
# maximin improvement
# --------------------------------------------------------------------------


@njit
def _pairwise_nb(P):
    n, d = P.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = P[i, k] - P[j, k]
                acc += t * t
            D[i, j] = D[j, i] = np.sqrt(acc)
    return D


@njit
def _min_dist_nb(D, n):
    out = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            if D[i, j] < out:
                out = D[i, j]
    return out


@njit
def _maximin_stage_nb(P, lo, hi, sizes, n0, rtype, ri, rj, rk, ru, p, eps):
    """Greedy moves of rows [lo, hi); returns the number of accepted moves."""
    d = P.shape[1]
    D = _pairwise_nb(P)
    nlev = sizes.shape[0]
    md = np.empty(nlev)
    for t in range(nlev):
        md[t] = _min_dist_nb(D, sizes[t])
    m = hi - lo
    ns = sizes[nlev - 1]
    newi = np.empty(d)
    newj = np.empty(d)
    di = np.empty(n0)
    dj = np.empty(n0)
    accepted = 0
    for it in range(rtype.shape[0]):
        swap = m >= 2 and rtype[it] < 0.5
        i = lo + int(ri[it] * m)
        k = int(rk[it] * d)
        j = -1
        for c in range(d):
            newi[c] = P[i, c]
        if swap:
            j = lo + int(rj[it] * (m - 1))
            if j >= i:
                j += 1
            for c in range(d):
                newj[c] = P[j, c]
            newi[k] = P[j, k]
            newj[k] = P[i, k]
        else:
            cell = np.floor(P[i, k] * n0)
            newi[k] = (cell + eps + (1.0 - 2.0 * eps) * ru[it]) / n0
        for r in range(n0):
            acc = 0.0
            for c in range(d):
                t = newi[c] - P[r, c]
                acc += t * t
            di[r] = np.sqrt(acc)
        if swap:
            for r in range(n0):
                acc = 0.0
                for c in range(d):
                    t = newj[c] - P[r, c]
                    acc += t * t
                dj[r] = np.sqrt(acc)
            acc = 0.0
            for c in range(d):
                t = newi[c] - newj[c]
                acc += t * t
            di[j] = np.sqrt(acc)
            dj[i] = di[j]
        ok = True
        for t in range(nlev):
            nt = sizes[t]
            for r in range(nt):
                if r != i and r != j and di[r] < md[t]:
                    ok = False
                    break
                if swap and r != i and r != j and dj[r] < md[t]:
                    ok = False
                    break
            if swap and di[j] < md[t]:
                ok = False
            if not ok:
                break
        if not ok:
            continue
        # sequential sums in the same order as the numpy kernel
        delta_i = 0.0
        delta_j = 0.0
        for r in range(ns):
            if r != i:
                delta_i += di[r] ** (-p) - D[i, r] ** (-p)
            if swap and r != i and r != j:
                delta_j += dj[r] ** (-p) - D[j, r] ** (-p)
        delta = delta_i + delta_j
        if not delta < 0.0:
            continue
        accepted += 1
        for c in range(d):
            P[i, c] = newi[c]
        for r in range(n0):
            if r != i:
                D[i, r] = D[r, i] = di[r]
        if swap:
            for c in range(d):
                P[j, c] = newj[c]
            for r in range(n0):
                if r != j:
                    D[j, r] = D[r, j] = dj[r]
        for t in range(nlev):
            md[t] = _min_dist_nb(D, sizes[t])
    return accepted


def _pairwise_np(P):
    diff = P[:, None, :] - P[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def _min_dist_np(D, n):
    if n < 2:
        return np.inf
    iu = np.triu_indices(n, 1)
    return D[:n, :n][iu].min()


def _seq_sum(x):
    return float(np.cumsum(x)[-1]) if x.size else 0.0


def _maximin_stage_np(P, lo, hi, sizes, n0, rtype, ri, rj, rk, ru, p, eps):
    d = P.shape[1]
    D = _pairwise_np(P)
    md = np.array([_min_dist_np(D, n) for n in sizes])
    m = hi - lo
    ns = sizes[-1]
    accepted = 0
    for it in range(rtype.shape[0]):
        swap = m >= 2 and rtype[it] < 0.5
        i = lo + int(ri[it] * m)
        k = int(rk[it] * d)
        newi = P[i].copy()
        j = -1
        if swap:
            j = lo + int(rj[it] * (m - 1))
            if j >= i:
                j += 1
            newj = P[j].copy()
            newi[k], newj[k] = P[j, k], P[i, k]
        else:
            cell = np.floor(P[i, k] * n0)
            newi[k] = (cell + eps + (1.0 - 2.0 * eps) * ru[it]) / n0
        di = np.sqrt(((P - newi) ** 2).sum(1))
        if swap:
            dj = np.sqrt(((P - newj) ** 2).sum(1))
            di[j] = dj[i] = np.sqrt(((newi - newj) ** 2).sum())
        mask = np.ones(n0, dtype=bool)
        mask[i] = False
        if swap:
            mask[j] = False
        ok = True
        for t, nt in enumerate(sizes):
            mt = mask[:nt]
            if (di[:nt][mt] < md[t]).any():
                ok = False
            elif swap and ((dj[:nt][mt] < md[t]).any() or di[j] < md[t]):
                ok = False
            if not ok:
                break
        if not ok:
            continue
        # cumsum is sequential, unlike the pairwise sum(), so the rounding
        # matches the compiled kernel; 1-d swaps change nothing and the sign
        # of the residual decides acceptance
        sel = np.arange(ns) != i
        delta = _seq_sum(di[:ns][sel] ** (-p) - D[i, :ns][sel] ** (-p))
        if swap:
            selj = mask[:ns]
            delta += _seq_sum(dj[:ns][selj] ** (-p) - D[j, :ns][selj] ** (-p))
        if not delta < 0.0:
            continue
        accepted += 1
        P[i] = newi
        D[i, :] = D[:, i] = di
        D[i, i] = 0.0
        if swap:
            P[j] = newj
            D[j, :] = D[:, j] = dj
            D[j, j] = 0.0
        md = np.array([_min_dist_np(D, n) for n in sizes])
    return accepted


def maximin_improve(design, iters=None, seed=None):
    """Greedy maximin pass over a nested design, one level at a time.

    Levels are processed from the highest fidelity down; at each level only
    the points first introduced there move. A move either swaps one
    coordinate between two such points or redraws one coordinate inside its
    finest stratum, so nesting and every level's Latin property survive.
    A move is kept only if it lowers the level's Morris-Mitchell phi_p
    and no level's minimum pairwise distance decreases.
    ``iters=None`` gives 100 moves per point of the level.
    """
    if iters == 0:
        return design
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = np.ascontiguousarray(design.points, dtype=float).copy()
    sizes = design.sizes
    n0 = sizes[0]
    S = len(sizes)
    kernel = _maximin_stage_nb if USE_NUMBA else _maximin_stage_np
    for s in range(S - 1, -1, -1):
        lo = sizes[s + 1] if s + 1 < S else 0
        hi = sizes[s]
        if hi - lo < 1:
            continue
        n_it = 100 * sizes[s] if iters is None else int(iters)
        draws = rng.random((5, n_it))
        kernel(P, lo, hi, np.array(sizes[:s + 1], dtype=np.int64), n0,
               draws[0], draws[1], draws[2], draws[3], draws[4], _PHI_P, _EPS)
    return NestedDesign(P, sizes)


def min_distances(design):
    """Smallest pairwise distance within each level."""
    return [_min_dist_np(_pairwise_np(P), P.shape[0]) for P in design.levels]


# --------------------------------------------------------------------------
# checkers
# --------------------------------------------------------------------------


def is_nested(levels):
    """Every point of level s + 1 appears (exactly) among the points of level s."""
    for lo, hi in zip(levels, levels[1:]):
        rows = {tuple(r) for r in np.asarray(lo).tolist()}
        if any(tuple(r) not in rows for r in np.asarray(hi).tolist()):
            return False
    return True


def is_lhs(P, lower=0.0, upper=1.0):
    """Each coordinate of the n points hits each of the n equal strata once."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    x = (P - lower) / (np.asarray(upper, dtype=float) - lower)
    if np.any(x < 0) or np.any(x >= 1):
        return False
    for k in range(P.shape[1]):
        if not np.array_equal(np.sort(_strata(x[:, k], n)), np.arange(n)):
            return False
    return True


# --------------------------------------------------------------------------
# criterion optimisation
# --------------------------------------------------------------------------


def optimize_criterion(objective, grid, lower, upper, step=None, local_steps=20,
                       max_moves=200, grid_values=None):
    """Maximise ``objective`` by exhaustive grid search then coordinate search.

    ``objective`` maps an (m, d + 1) array of points to m values. ``grid``
    rows are points (design coordinates then fidelity). Local moves act on
    the design coordinates only; the fidelity of the best grid point is
    kept. ``step`` defaults to the grid spacing per coordinate and is halved
    ``local_steps`` times. Ties on the grid go to the first row.
    ``grid_values`` may hold already computed objective values on ``grid``.

    Returns ``(point, value)``.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[0] == 0:
        raise ValueError("empty grid")
    vals = np.asarray(objective(grid) if grid_values is None else grid_values,
                      dtype=float)
    ib = int(np.argmax(vals))
    x, fx = grid[ib].copy(), float(vals[ib])
    if not local_steps:
        return x, fx
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.shape[0]
    if step is None:
        step = np.empty(d)
        for k in range(d):
            u = np.unique(grid[:, k])
            step[k] = np.min(np.diff(u)) if u.size > 1 else (upper[k] - lower[k]) / 10
    h = np.broadcast_to(np.asarray(step, dtype=float), (d,)).copy()
    for _ in range(local_steps + 1):
        for _ in range(max_moves):
            trials = np.repeat(x[None, :], 2 * d, axis=0)
            for k in range(d):
                trials[2 * k, k] += h[k]
                trials[2 * k + 1, k] -= h[k]
            trials[:, :d] = np.clip(trials[:, :d], lower, upper)
            tv = np.asarray(objective(trials), dtype=float)
            it = int(np.argmax(tv))
            if tv[it] > fx:
                x, fx = trials[it], float(tv[it])
            else:
                break
        h /= 2.0
    return x, fx
