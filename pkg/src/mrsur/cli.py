"""Command-line entry point: ``mrsur <subcommand> [options]``."""
import argparse
import dataclasses
import os
import sys

from .harness import ExperimentError, export_results, load_config, run_experiment, run_strategies

_TESTBED = {"run-1d": "forrester", "run-oscillator": "oscillator", "run-toy": "toy",
            "pareto": "toy"}


def _parser():
    p = argparse.ArgumentParser(prog="mrsur", description=(
        "Sequential multi-fidelity designs for excursion-probability estimation."))
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "run-1d": "two-level Forrester example",
        "run-oscillator": "random damped oscillator with ten time-step levels",
        "run-toy": "sampled additive-GP toy problem",
        "pareto": "criterion fields and Pareto fronts (rep 0, one CSV per iteration)",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="flat YAML file of ExperimentConfig fields")
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", type=int)
        s.add_argument("--budget", type=float)
        s.add_argument("--strategy", help=(
            "mrsur, mrsur-batch(q) or sur-fixed(delta); a comma-separated list "
            "runs each into its own subdirectory"))
        s.add_argument("--batch-size", type=int, dest="batch_size")
        s.add_argument("--out")
        s.add_argument("--jobs", type=int, help="parallel repetitions (joblib)")
    return p


def _split(strategy):
    # commas inside parentheses are not separators
    out, depth, cur = [], 0, ""
    for ch in strategy:
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    out.append(cur.strip())
    return [s for s in out if s]


def main(argv=None):
    """Run the command line; returns the process exit status."""
    args = _parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in
                 ("seed", "reps", "budget", "batch_size", "out", "jobs")}
    overrides["testbed"] = _TESTBED[args.command]
    strategies = _split(args.strategy) if args.strategy else None
    if strategies and len(strategies) == 1:
        overrides["strategy"] = strategies[0]
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "pareto":
            cfg = dataclasses.replace(cfg, reps=1, pareto_dumps=True)
        if strategies and len(strategies) > 1:
            for s in strategies:
                load_config(args.config, **{**overrides, "strategy": s})
            run_strategies(cfg, strategies, cfg.out)
        else:
            records = run_experiment(cfg, cfg.out)
            export_results(records, cfg.out, cfg)
    except (ValueError, LookupError, ExperimentError, OSError) as exc:
        print(f"mrsur: error: {exc}", file=sys.stderr)
        return 2
    print(f"results written to {os.path.abspath(cfg.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
