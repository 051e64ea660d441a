"""Time the numba kernels against their numpy fallbacks.

Both variants are called directly, so the MRSUR_DISABLE_NUMBA flag does not
matter here. Each row reports the best of ``--repeat`` timings after one
warm-up call (which also triggers JIT compilation) and the largest absolute
difference between the two outputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""
import argparse
import csv
import sys
import time

import numpy as np

from mrsur import design, gp, special, testbeds


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _cases(rng):
    n = 200_000
    a = rng.normal(0, 2, n)
    b = rng.normal(0, 2, n)
    r = rng.uniform(-0.999, 0.999, n)
    yield ("bvn_cdf 2e5", lambda: special._bvn_numba(a, b, r),
           lambda: special._bvn_numpy(a, b, r))

    U1 = rng.random((400, 2))
    U2 = rng.random((400, 2))
    inv = np.array([3.0, 5.0])
    yield ("matern_corr 400x400 d=2", lambda: gp._matern_corr_nb(U1, U2, inv, 2),
           lambda: gp._matern_corr_np(U1, U2, inv, 2))

    cfg = testbeds.OscillatorConfig(3.0, 0.05, 0.01)
    E = testbeds.expm_2x2(cfg.omega0, cfg.zeta, cfg.delta)
    noise = rng.standard_normal((500, cfg.n_steps))
    yield ("oscillator 500 paths x 3000 steps",
           lambda: testbeds._trajectories_nb(E, noise, 0.0, 0.0),
           lambda: testbeds._trajectories_np(E, noise, 0.0, 0.0))

    base = design.nlhs((60, 20, 10), 2, seed=1, maximin_iters=0)
    sizes = np.array([60], dtype=np.int64)
    draws = np.random.default_rng(2).random((5, 3000))

    def stage(kernel):
        P = base.points.copy()
        kernel(P, 20, 60, sizes, 60, *draws, 20.0, 1e-9)
        return P

    yield ("maximin stage n=60, 3000 moves",
           lambda: stage(design._maximin_stage_nb),
           lambda: stage(design._maximin_stage_np))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--csv")
    args = p.parse_args(argv)

    rows = []
    for name, fast, slow in _cases(np.random.default_rng(0)):
        diff = float(np.max(np.abs(np.asarray(fast()) - np.asarray(slow()))))
        t_nb = _best(fast, args.repeat)
        t_np = _best(slow, args.repeat)
        rows.append((name, t_nb, t_np, t_np / t_nb, diff))

    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}  max|diff|")
    for name, t_nb, t_np, sp, diff in rows:
        print(f"{name:<{w}}  {t_nb:10.4f}  {t_np:10.4f}  {sp:8.1f}  {diff:.1e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["kernel", "numba_s", "numpy_s", "speedup", "max_abs_diff"])
            wr.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
