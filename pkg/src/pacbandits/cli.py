"""Command-line interface.

Subcommands: gen-instance, solve-weights, run, bench.  All indices in CLI
output are 1-based; exit code 0 means success, 2 a configuration/input
error, and 3 (bench) that at least one run failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, RunConfig, RunResult, run_batch
from .env import GenConstraints, RngStream, gen_random_instance
from .harness import (ExperimentConfigError, emit_csv, emit_trajectories,
                      load_experiment_config, run_experiment)
from .model import (NON_SEPARATOR, SEPARATOR, InstanceError, best_arm, gaps,
                    load_instance, save_instance)
from .optim import characteristic_time, d_bernoulli, grid_oracle

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_RUN_FAILED = 3


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return _EXIT_CONFIG


def _cmd_gen_instance(args) -> int:
    try:
        cons = GenConstraints(n=args.n, k=args.k)
        inst = gen_random_instance(cons, args.kind, RngStream(args.seed, 0))
        save_instance(inst, args.out)
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(str(exc))
    print(args.out)
    return _EXIT_OK


def _cmd_solve_weights(args) -> int:
    try:
        inst = load_instance(args.instance)
        ct = (characteristic_time(inst, tol=args.tol)
              if inst.kind == SEPARATOR else characteristic_time(inst))
    except (OSError, InstanceError, ValueError) as exc:
        return _fail(str(exc))
    out = {
        "kind": inst.kind,
        "n": inst.n,
        "k": inst.k,
        "best_arm": best_arm(inst) + 1,
        "gaps": [float(g) for g in gaps(inst)],
        "weights": [float(w) for w in ct.weights],
        "objective": ct.objective,
        "t_star": ct.t_star,
    }
    if ct.mixture is not None:
        out["mixture"] = [float(p) for p in ct.mixture]
    if args.oracle:
        ref = grid_oracle(inst, resolution=0.005)
        out["oracle"] = {
            "resolution": 0.005,
            "objective": ref.objective,
            "t_star": ref.t_star,
            "objective_shortfall": ref.objective - ct.objective,
        }
    print(json.dumps(out, indent=2))
    return _EXIT_OK


def _result_to_dict(res: RunResult, delta: float) -> dict:
    return {
        "algo": res.algo,
        "delta": delta,
        "tau": res.tau,
        "recommendation": res.recommendation + 1,
        "correct": res.correct,
        "truncated": res.truncated,
        "seed": res.seed,
        "stream": res.stream,
        "trajectory": [
            {
                "round": pt.round,
                "statistic": pt.statistic,
                "threshold": pt.threshold,
                "arm_freq": [float(x) for x in pt.arm_freq],
                "ctx_freq": [float(x) for x in pt.ctx_freq],
            }
            for pt in res.trajectory
        ],
    }


def _cmd_run(args) -> int:
    try:
        inst = load_instance(args.instance)
        cfg = RunConfig(delta=args.delta, max_rounds=args.max_rounds,
                        trajectory_stride=args.trajectory)
        res = run_batch(args.algo, inst, cfg, [RngStream(args.seed, 0)])[0]
    except (OSError, InstanceError, ValueError) as exc:
        return _fail(str(exc))
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(_result_to_dict(res, args.delta), indent=2) + "\n")
    print(f"tau={res.tau} recommendation={res.recommendation + 1} "
          f"correct={res.correct} truncated={res.truncated}")
    return _EXIT_OK


def _cmd_bench(args) -> int:
    try:
        cfg = load_experiment_config(args.config)
        aggregates = run_experiment(cfg, jobs=args.jobs)
    except ExperimentConfigError as exc:
        return _fail(str(exc))
    out_dir = Path(args.out)
    emit_csv(aggregates, out_dir)
    emit_trajectories(aggregates, out_dir)
    failed = [a for a in aggregates if a.failure is not None]
    for agg in aggregates:
        if agg.failure is not None:
            print(f"FAILED {agg.instance_id}/{agg.algo}:\n{agg.failure}",
                  file=sys.stderr)
        else:
            print(f"{agg.instance_id}/{agg.algo}: mean_tau={agg.mean_tau:.1f} "
                  f"error_rate={agg.error_rate:.4f} truncated={agg.truncated}")
    print(f"wrote {out_dir / 'summary.csv'}")
    return _EXIT_RUN_FAILED if failed else _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacbandits",
        description="Best-arm identification with post-action context")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-instance", help="generate a random instance file")
    p.add_argument("--n", type=int, required=True, help="number of arms")
    p.add_argument("--k", type=int, required=True, help="number of contexts")
    p.add_argument("--kind", choices=[NON_SEPARATOR, SEPARATOR], required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output instance JSON path")
    p.set_defaults(func=_cmd_gen_instance)

    p = sub.add_parser("solve-weights", help="solve the optimal-weights problem")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--oracle", action="store_true",
                   help="also compare against the grid-search reference")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="solver tolerance (separator instances)")
    p.set_defaults(func=_cmd_solve_weights)

    p = sub.add_parser("run", help="run a single identification trial")
    p.add_argument("--algo", choices=sorted(ALGORITHMS), required=True)
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trajectory", type=int, default=0, metavar="STRIDE",
                   help="record a snapshot every STRIDE rounds (0 = off)")
    p.add_argument("--max-rounds", type=int, default=50_000_000)
    p.add_argument("--out", required=True, help="output result JSON path")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="run a benchmark config and emit CSVs")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel worker processes (default: config value)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.seterr(all="raise", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
