"""End-to-end sequential-design experiments and their CSV exports.

A run draws a nested initial design, fits the hyperparameters by adaptive
Metropolis followed by a MAP search, then repeatedly evaluates the SUR
criteria on a candidate grid, refines the best candidate locally, simulates
it and updates the posterior, until no candidate fits in the remaining
budget.  Inputs are rescaled to the unit cube for modelling; exported points
are in the original box.
"""
import csv
import dataclasses
import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .criteria import IntegrationNodes, SurContext, mrsur_select
from .design import nlhs, optimize_criterion
from .gp import fit
from .inference import (AdditiveFamily, ARFamily, LogNormal, LogNormalNoisePrior,
                        adaptive_mh, map_estimate)
from .models import NoiseModel, UnknownLevel, _level_indices
from .testbeds import (TOY_NOISE_SD, CostModel, OscillatorConfig, forrester_hf,
                       forrester_lf, oscillator_responses, toy_gp_sampler, toy_model)

__all__ = [
    "ExperimentConfig",
    "ExperimentError",
    "RunRecord",
    "run_experiment",
    "run_strategies",
    "error_metric",
    "aggregate_median",
    "export_results",
    "read_runs",
    "load_config",
    "parse_strategy",
    "reference_q",
]

OSCILLATOR_LEVELS = (1.0, 0.51, 1 / 3, 0.25, 0.2, 1 / 6, 0.1, 0.05, 0.02, 0.01)
OSCILLATOR_INV_COST = (32.7, 24.8, 19.9, 16.7, 14.3, 12.6, 8.4, 4.6, 2.0, 1.0)


class ExperimentError(RuntimeError):
    """A module error raised inside a run, tagged with its position."""


@dataclass
class ExperimentConfig:
    """All settings of one experiment; ``preset`` gives per-testbed defaults."""
    testbed: str = "forrester"
    family: str = "ar"
    levels: list = field(default_factory=lambda: [1.0, 2.0])
    costs: list | None = field(default_factory=lambda: [0.25, 1.0])
    cost_a: float | None = None
    cost_b: float | None = None
    init_sizes: list = field(default_factory=lambda: [6, 3])
    strategy: str = "mrsur"
    batch_size: int = 1
    budget: float = 13.5
    reps: int = 1
    seed: int = 0
    z_crit: float = 10.0
    lower: list = field(default_factory=lambda: [0.0])
    upper: list = field(default_factory=lambda: [1.0])
    node_grid: int = 500
    cand_grid: int = 101
    mcmc_init: int = 10000
    mcmc_iter: int = 2000
    refit_every: int = 1
    map_maxiter: int = 2000
    local_steps: int = 20
    maximin_iters: int | None = None
    S: float = 1.0
    t_end: float = 30.0
    ref_samples: int = 2000
    ref_seed: int = 12345
    cache_dir: str = ".mrsur_cache"
    pareto_dumps: bool = True
    jobs: int = 1
    out: str = "results"

    @classmethod
    def preset(cls, testbed):
        if testbed == "forrester":
            return cls()
        if testbed == "oscillator":
            return cls(
                testbed="oscillator", family="additive",
                levels=list(OSCILLATOR_LEVELS),
                costs=[1.0 / c for c in OSCILLATOR_INV_COST],
                init_sizes=[180, 60, 20, 10, 5, 0, 0, 0, 0, 0],
                budget=20.0, z_crit=-3.0, lower=[0.5, 0.01], upper=[10.0, 0.5],
                node_grid=20, cand_grid=11, mcmc_init=2000, mcmc_iter=300,
                refit_every=5, map_maxiter=600, local_steps=10, S=0.005, reps=8)
        if testbed == "toy":
            return cls(
                testbed="toy", family="additive", levels=[1.0, 0.5, 0.2, 0.1],
                costs=[1.0, 2.0, 5.0, 10.0], init_sizes=[12, 6, 6, 3],
                budget=120.0, z_crit=0.0, lower=[-0.5], upper=[0.5],
                node_grid=101, cand_grid=101, mcmc_init=0, mcmc_iter=0)
        raise ValueError(f"unknown testbed {testbed!r}")

    def validate(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.init_sizes) != len(self.levels):
            raise ValueError("one initial size per level")
        if self.costs is not None and len(self.costs) != len(self.levels):
            raise ValueError("one cost per level")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        if not self.budget >= self.initial_cost() - 1e-12:
            raise ValueError(f"budget {self.budget} below the initial design cost "
                             f"{self.initial_cost()}")
        parse_strategy(self.strategy)
        return self

    def cost_model(self):
        if self.costs is not None:
            return CostModel.from_table(dict(zip(self.levels, self.costs)))
        return CostModel.affine(self.cost_a, self.cost_b)

    def initial_cost(self):
        cm = self.cost_model()
        return float(sum(n * cm(d) for n, d in zip(self.init_sizes, self.levels)))

    def to_dict(self):
        return dataclasses.asdict(self)


def load_config(path=None, **overrides):
    """Preset for the testbed, then the YAML file, then ``overrides``."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a flat key/value mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig.preset(data.get("testbed", "forrester"))
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for k, v in data.items():
        setattr(cfg, k, v)
    return cfg.validate()


_STRAT_RE = re.compile(r"^(mrsur|mrsur-batch|sur-fixed)(?:[(:]([^)]*)\)?)?$")


def parse_strategy(name):
    """``mrsur``, ``mrsur-batch[(q)]`` or ``sur-fixed(delta)`` -> (kind, arg)."""
    m = _STRAT_RE.match(name.strip())
    if not m:
        raise ValueError(f"unknown strategy {name!r}")
    kind, arg = m.groups()
    if kind == "sur-fixed":
        if not arg:
            raise ValueError("sur-fixed needs a level, e.g. sur-fixed(2)")
        return kind, float(arg)
    if kind == "mrsur-batch":
        return kind, int(arg) if arg else None
    return kind, None


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def error_metric(p, truth, weights):
    """Weighted L2 distance sqrt(sum w (p - truth)^2)."""
    p = np.asarray(p, dtype=float)
    truth = np.asarray(truth, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(math.sqrt(w @ (p - truth) ** 2))


def _step_value(cost, err, c):
    i = np.searchsorted(cost, c + 1e-12 * max(1.0, abs(c)), side="right") - 1
    return err[i] if i >= 0 else np.nan


def aggregate_median(records, cost_grid=None):
    """Median over runs of the error at the last iteration with c_n <= cost.

    ``records`` are :class:`RunRecord` objects or ``(cost, error)`` array
    pairs. Grid costs below a run's first cost leave that run out. Returns
    an array with columns cost, median error, number of runs.
    """
    curves = []
    for r in records:
        c, e = (r.cost, r.error) if isinstance(r, RunRecord) else r
        c = np.asarray(c, dtype=float)
        e = np.asarray(e, dtype=float)
        curves.append((c, e))
    if cost_grid is None:
        cost_grid = np.unique(np.concatenate([c for c, _ in curves])) if curves else []
    out = []
    for c in np.asarray(cost_grid, dtype=float):
        vals = np.array([_step_value(cc, ee, c) for cc, ee in curves])
        vals = vals[~np.isnan(vals)]
        if vals.size:
            out.append((c, float(np.median(vals)), vals.size))
    return np.array(out, dtype=float).reshape(-1, 3)


# --------------------------------------------------------------------------
# testbeds as seen by the loop
# --------------------------------------------------------------------------


class _Bed:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.levels = tuple(float(d) for d in cfg.levels)
        self.lower = np.asarray(cfg.lower, dtype=float)
        self.upper = np.asarray(cfg.upper, dtype=float)
        self.dim = self.lower.shape[0]

    def to_box(self, U):
        return self.lower + (self.upper - self.lower) * U

    def nodes(self):
        return IntegrationNodes.grid(np.zeros(self.dim), np.ones(self.dim),
                                     self.cfg.node_grid, self.node_level)


class _Forrester(_Bed):
    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        if len(self.levels) != 2:
            raise ValueError("the forrester testbed has two levels")
        self.node_level = self.levels[-1]

    def simulate(self, U, deltas, rng):
        u = self.to_box(U)[:, 0]
        hf = _level_indices(self.levels, deltas) == 1
        return np.where(hf, forrester_hf(u), forrester_lf(u))

    def truth(self, nodes):
        return (forrester_hf(self.to_box(nodes.X[:, :-1])[:, 0]) > self.cfg.z_crit
                ).astype(float)

    def family(self, X, z):
        return ARFamily(self.levels, self.dim)

    def theta0(self, fam, X, z):
        v = float(np.var(z)) or 1.0
        vals = {n: (v if n.startswith("sigma2") else 1.0 if n.startswith("rho")
                    else 2.0) for n in fam.names}
        return vals


class _Oscillator(_Bed):
    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.node_level = self.levels[-1]

    def _cfg(self, x, delta):
        return OscillatorConfig(float(x[0]), float(x[1]), float(delta),
                                t_end=self.cfg.t_end, S=self.cfg.S,
                                z_crit=self.cfg.z_crit)

    def simulate(self, U, deltas, rng):
        B = self.to_box(U)
        return np.array([oscillator_responses(self._cfg(x, d), 1, rng)[0]
                         for x, d in zip(B, deltas)])

    def truth(self, nodes):
        return reference_q(self.cfg, nodes)

    def family(self, X, z):
        v = float(np.var(z)) or 1.0
        prior = LogNormalNoisePrior(self.levels, math.log(0.1 * v))
        return AdditiveFamily(self.levels, self.dim,
                              priors={"sigma2": LogNormal(math.log(v), math.log(10))},
                              noise_prior=prior, sampled=_observed(self.levels, X))

    def theta0(self, fam, X, z):
        v = float(np.var(z)) or 1.0
        vals = {"sigma2": v, "G": 1.0, "L": 1.0}
        for n in fam.names:
            if n.startswith("a"):
                vals[n] = 2.0
            elif n.startswith("lam"):
                vals[n] = 0.1 * v
        return vals


def _observed(levels, X):
    return sorted(set(_level_indices(levels, X[:, -1]).tolist()))


class _FixedFamily:
    """All hyperparameters known (the sampled-GP toy)."""

    names = ()
    dim = 0

    def __init__(self, model, noise):
        self._built = (model, noise)

    def build(self, values):
        return self._built

    def as_dict(self, params):
        return {}


class _Toy(_Bed):
    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.node_level = 0.0
        self.problem = toy_gp_sampler(rng, n_u=cfg.node_grid,
                                      deltas=self.levels + (0.0,))

    def nodes(self):
        u = np.linspace(0.0, 1.0, self.cfg.node_grid)
        return IntegrationNodes.uniform(u, 0.0)

    def simulate(self, U, deltas, rng):
        return self.problem.observe(self.to_box(U)[:, 0], deltas)

    def truth(self, nodes):
        return (self.problem.xi(self.to_box(nodes.X[:, :-1])[:, 0], 0.0) > 0
                ).astype(float)

    def family(self, X, z):
        var = {d: TOY_NOISE_SD ** 2 for d in self.levels}
        var[0.0] = 0.0
        return _FixedFamily(toy_model(mean=None), NoiseModel(var))

    def theta0(self, fam, X, z):
        return {}


_BEDS = {"forrester": _Forrester, "oscillator": _Oscillator, "toy": _Toy}


def reference_q(cfg, nodes):
    """Brute-force exceedance probability at the nodes, cached on disk.

    ``ref_samples`` responses per node at the highest-fidelity level drawn
    from a single stream seeded with ``ref_seed``.
    """
    key = json.dumps([cfg.lower, cfg.upper, cfg.node_grid, cfg.ref_samples,
                      cfg.ref_seed, cfg.S, cfg.t_end, cfg.z_crit, nodes.X.tolist()])
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    path = os.path.join(cfg.cache_dir, f"qref_{digest}.npy")
    if os.path.exists(path):
        return np.load(path)
    lower = np.asarray(cfg.lower, float)
    upper = np.asarray(cfg.upper, float)
    rng = np.random.default_rng(cfg.ref_seed)
    q = np.empty(nodes.X.shape[0])
    for i, x in enumerate(nodes.X):
        b = lower + (upper - lower) * x[:-1]
        oc = OscillatorConfig(b[0], b[1], x[-1], t_end=cfg.t_end, S=cfg.S,
                              z_crit=cfg.z_crit)
        q[i] = np.mean(oscillator_responses(oc, cfg.ref_samples, rng) > cfg.z_crit)
    os.makedirs(cfg.cache_dir, exist_ok=True)
    np.save(path, q)
    return q


# --------------------------------------------------------------------------
# one run
# --------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Rows of one run; row 0 is the initial design (no selected point)."""

    rep: int
    seed: list
    iteration: list = field(default_factory=list)
    points: list = field(default_factory=list)
    level: list = field(default_factory=list)
    cost_list: list = field(default_factory=list)
    H: list = field(default_factory=list)
    error_list: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    initial_cost: float = 0.0

    @property
    def cost(self):
        return np.asarray(self.cost_list, dtype=float)

    @property
    def error(self):
        return np.asarray(self.error_list, dtype=float)

    def append(self, it, point, level, cost, H, err, wall):
        self.iteration.append(it)
        self.points.append(point)
        self.level.append(level)
        self.cost_list.append(float(cost))
        self.H.append(float(H))
        self.error_list.append(float(err))
        self.wall.append(float(wall))


def _initial_design(cfg, bed, rng):
    sizes = [int(n) for n in cfg.init_sizes]
    k = len(sizes)
    while k and sizes[k - 1] == 0:
        k -= 1
    if any(n == 0 for n in sizes[:k]):
        raise ValueError("unobserved levels must come last in init_sizes")
    design = nlhs(sizes[:k], bed.dim, rng, maximin_iters=cfg.maximin_iters)
    Us, ds = [], []
    for s, P in enumerate(design.levels):
        Us.append(P)
        ds.append(np.full(P.shape[0], bed.levels[s]))
    return np.vstack(Us), np.concatenate(ds)


class _Hyper:
    """Hyperparameter state: MH then MAP, restarted from the last MAP."""

    def __init__(self, cfg, bed, rng):
        self.cfg, self.bed, self.rng = cfg, bed, rng
        self.family = None
        self.values = None

    def update(self, X, z, first):
        cfg, bed = self.cfg, self.bed
        if self.family is None:
            self.family = bed.family(X, z)
            self.values = bed.theta0(self.family, X, z)
        elif isinstance(self.family, AdditiveFamily) and self.family.noise_prior is not None:
            sampled = tuple(_observed(bed.levels, X))
            if sampled != self.family.sampled:
                self.family = self.family.with_sampled(sampled)
        fam = self.family
        n_iter = cfg.mcmc_init if first else cfg.mcmc_iter
        if fam.dim and (n_iter or first):
            target = fam.log_target(X, z)
            theta = fam.to_theta(self.values)
            chain = adaptive_mh(target, theta, n_iter, self.rng)
            theta, _ = map_estimate(chain, target, xatol=1e-4, fatol=1e-6,
                                    maxiter=cfg.map_maxiter)
            new = fam.from_theta(theta)
            if isinstance(fam, AdditiveFamily) and fam.noise_prior is not None:
                lam = fam.noise_variances(new)
                new.update({f"lam_{i}": float(v) for i, v in enumerate(lam)})
            self.values = {**self.values, **new}
        model, noise = fam.build(fam.as_dict(self.values) if fam.dim else {})
        return model, noise


def _candidates(cfg, dim):
    axes = [np.linspace(0.0, 1.0, cfg.cand_grid)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _refine_single(ctx, x, cost, cfg, dim):
    h = np.full(dim, 1.0 / (cfg.cand_grid - 1))
    d = x[-1]

    def obj(P):
        P = np.array(P)
        P[:, -1] = d
        return ctx.single(P)[1] / cost

    xr, _ = optimize_criterion(obj, x[None, :], np.zeros(dim), np.ones(dim), step=h,
                               local_steps=cfg.local_steps)
    return xr


def _select_single(ctx, cand, levels, cm, cfg, dim):
    X = np.vstack([np.column_stack([cand, np.full(cand.shape[0], d)]) for d in levels])
    J, G = ctx.single(X)
    cost = cm(X[:, -1])
    idx, fieldv = mrsur_select(X, G, cost, J, ctx.H)
    x = X[idx]
    if cfg.local_steps:
        x = _refine_single(ctx, x, cost[idx], cfg, dim)
    return x[None, :], float(cost[idx]), fieldv


def _select_batch(ctx, cand, levels, cm, cfg, dim, q):
    pts, costs, Js, Gs = [], [], [], []
    for d in levels:
        Xd = np.column_stack([cand, np.full(cand.shape[0], d)])
        chosen = []
        for _ in range(q):
            _, G = ctx.single(Xd, extra=np.array(chosen) if chosen else None)
            i, _ = mrsur_select(Xd, G, np.ones(Xd.shape[0]))
            chosen.append(Xd[i])
        B = np.array(chosen)
        J, G = ctx.batch(B)
        pts.append(B)
        costs.append(cm(d))
        Js.append(J)
        Gs.append(G)
    idx, fieldv = mrsur_select(np.array(pts), np.array(Gs), np.array(costs),
                               np.array(Js), ctx.H)
    B, c = pts[idx], costs[idx]
    if cfg.local_steps:
        d = B[0, -1]

        def obj(flat):
            out = np.empty(flat.shape[0])
            for j, f in enumerate(flat):
                P = np.column_stack([f.reshape(q, dim), np.full(q, d)])
                out[j] = ctx.batch(P)[1]
            return out

        flat0 = B[:, :-1].ravel()
        f, _ = optimize_criterion(obj, flat0[None, :], np.zeros(q * dim), np.ones(q * dim),
                                  step=np.full(q * dim, 1.0 / (cfg.cand_grid - 1)),
                                  local_steps=cfg.local_steps)
        B = np.column_stack([f.reshape(q, dim), np.full(q, d)])
    return B, float(c), fieldv


def _match_level(levels, delta):
    # command-line levels such as 0.1666667 are written with few digits
    lv = np.asarray(levels, dtype=float)
    i = int(np.argmin(np.abs(lv - delta)))
    if abs(lv[i] - delta) > 1e-6 * abs(lv[i]):
        raise UnknownLevel(f"fixed level {delta} not in levels {lv.tolist()}")
    return levels[i]


def _run_one(cfg, rep, seed_seq, pareto_dir=None):
    streams = seed_seq.spawn(4)
    r_design, r_sim, r_mcmc, r_bed = (np.random.default_rng(s) for s in streams)
    bed = _BEDS[cfg.testbed](cfg, r_bed)
    cm = cfg.cost_model()
    kind, arg = parse_strategy(cfg.strategy)
    q = arg if kind == "mrsur-batch" and arg else cfg.batch_size
    levels = bed.levels if kind != "sur-fixed" else (_match_level(bed.levels, arg),)
    nodes = bed.nodes()
    truth = bed.truth(nodes)
    cand = _candidates(cfg, bed.dim)

    rec = RunRecord(rep, [int(seed_seq.entropy), *map(int, seed_seq.spawn_key)])
    rec.counts = {d: 0 for d in bed.levels}
    t0 = time.perf_counter()
    U, deltas = _initial_design(cfg, bed, r_design)
    X = np.column_stack([U, deltas])
    z = bed.simulate(U, deltas, r_sim)
    spent = float(cm(deltas).sum())
    rec.initial_cost = spent
    hyper = _Hyper(cfg, bed, r_mcmc)
    it = 0
    while True:
        try:
            if it % cfg.refit_every == 0:
                model, noise = hyper.update(X, z, first=(it == 0))
            state = fit(model, X, z, noise(X))
            ctx = SurContext(state, noise, cfg.z_crit, nodes)
            err = error_metric(ctx.excursion(), truth, nodes.weights)
            if it == 0:
                rec.append(0, None, None, spent, ctx.H, err, time.perf_counter() - t0)
            else:
                rec.append(it, new_pts, new_level, spent, ctx.H, err,
                           time.perf_counter() - t0)
            remaining = cfg.budget - spent
            afford = [d for d in levels if q * cm(d) <= remaining + 1e-9]
            if not afford:
                break
            t0 = time.perf_counter()
            if q == 1:
                B, c, fieldv = _select_single(ctx, cand, afford, cm, cfg, bed.dim)
            else:
                B, c, fieldv = _select_batch(ctx, cand, afford, cm, cfg, bed.dim, q)
            if pareto_dir is not None:
                fieldv.to_csv(os.path.join(pareto_dir, f"pareto_iter_{it + 1}.csv"))
            znew = bed.simulate(B[:, :-1], B[:, -1], r_sim)
        except ExperimentError:
            raise
        except Exception as exc:
            raise ExperimentError(f"rep {rep}, iteration {it}: "
                                  f"{type(exc).__name__}: {exc}") from exc
        X = np.vstack([X, B])
        z = np.concatenate([z, znew])
        spent += q * c
        it += 1
        lvl = int(_level_indices(bed.levels, B[0, -1])[0])
        rec.counts[bed.levels[lvl]] += q
        new_pts = bed.to_box(B[:, :-1])
        new_level = lvl
    return rec


def run_experiment(cfg, out_dir=None):
    """Run ``cfg.reps`` repetitions; returns one RunRecord per repetition.

    Repetition ``r`` uses the ``r``-th child of ``SeedSequence(cfg.seed)``,
    so results do not depend on ``jobs`` or on the number of repetitions.
    CriterionField dumps for repetition 0 go to ``out_dir`` when given.
    """
    cfg.validate()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    pareto_dir = None
    if out_dir is not None and cfg.pareto_dumps:
        os.makedirs(out_dir, exist_ok=True)
        pareto_dir = out_dir
    args = [(cfg, r, children[r], pareto_dir if r == 0 else None)
            for r in range(cfg.reps)]
    if cfg.testbed == "oscillator":
        # warm the reference cache once instead of racing in workers
        reference_q(cfg, _BEDS["oscillator"](cfg, None).nodes())
    if cfg.jobs == 1 or cfg.reps == 1:
        return [_run_one(*a) for a in args]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=cfg.jobs)(delayed(_run_one)(*a) for a in args)


def run_strategies(cfg, strategies, out):
    """Run several strategies with the same seeds, exporting to ``out/<name>``."""
    results = {}
    for name in strategies:
        sub = dataclasses.replace(cfg, strategy=name)
        d = os.path.join(out, _safe(name))
        records = run_experiment(sub, d)
        export_results(records, d, sub)
        results[name] = records
    return results


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def _fmt(v):
    return "" if v is None else repr(float(v))


def export_results(records, out_dir, cfg=None, dim=None, levels=None):
    """Write runs.csv, median.csv, selections.csv, timings.csv, config.echo."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        if cfg is not None:
            dim = len(cfg.lower)
            levels = [float(d) for d in cfg.levels]
        dim = dim or 1
        levels = levels or []
        ucols = [f"u{k + 1}" for k in range(dim)]
        with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rep", "iteration", *ucols, "delta", "level", "cost", "H", "error"])
            for r in records:
                for i in range(len(r.iteration)):
                    pts = r.points[i]
                    head = [r.rep, r.iteration[i]]
                    tail = [_fmt(r.cost_list[i]), _fmt(r.H[i]), _fmt(r.error_list[i])]
                    if pts is None:
                        w.writerow(head + [""] * (dim + 2) + tail)
                        continue
                    for p in np.atleast_2d(pts):
                        w.writerow(head + [_fmt(v) for v in p]
                                   + [_fmt(levels[r.level[i]]), r.level[i] + 1] + tail)
        write_median(aggregate_median(_dedupe(records)), os.path.join(out_dir, "median.csv"))
        with open(os.path.join(out_dir, "selections.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rep"] + [f"n_level_{s + 1}" for s in range(len(levels))]
                       + ["initial_cost", "final_cost"])
            for r in records:
                w.writerow([r.rep] + [r.counts.get(d, 0) for d in levels]
                           + [_fmt(r.initial_cost), _fmt(r.cost_list[-1])])
        with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rep", "iteration", "seconds"])
            for r in records:
                for i, t in zip(r.iteration, r.wall):
                    w.writerow([r.rep, i, f"{t:.6f}"])
        with open(os.path.join(out_dir, "config.echo"), "w") as fh:
            echo = cfg.to_dict() if cfg is not None else {}
            echo["run_seeds"] = {int(r.rep): r.seed for r in records}
            yaml.safe_dump(echo, fh, sort_keys=True)
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir!r}: {exc}") from exc


def _dedupe(records):
    """(cost, error) per iteration (batch rows share an iteration)."""
    out = []
    for r in records:
        c, e = r.cost, r.error
        out.append((c, e))
    return out


def write_median(curve, path):
    """Write ``aggregate_median`` output as ``cost,median_error,n_runs``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cost", "median_error", "n_runs"])
        for c, m, n in curve:
            w.writerow([_fmt(c), _fmt(m), int(n)])


def read_runs(path):
    """Parse runs.csv back into per-run (cost, error) arrays, one per iteration."""
    runs = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = int(row["rep"])
            it = int(row["iteration"])
            d = runs.setdefault(key, {})
            d[it] = (float(row["cost"]), float(row["error"]))
    out = []
    for key in sorted(runs):
        its = sorted(runs[key])
        out.append((np.array([runs[key][i][0] for i in its]),
                    np.array([runs[key][i][1] for i in its])))
    return out
