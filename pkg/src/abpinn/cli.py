"""Command-line entry point.

Verbs:
    run              train the first (or --seed) seed of a config
    sweep            train every configured seed and write summary.csv
    reference        generate a pseudo-spectral reference grid CSV
    validate-config  parse and validate a config, reporting problems
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .experiment import (
    ensure_reference,
    build_problem,
    reference_path,
    run_experiment,
)
from .problems import ProblemName, make_problem
from .spectral import SpectralConfig, SolverDiverged, default_config, save_grid, solve


def _add_config_arg(p):
    p.add_argument("--config", required=True, help="experiment config file")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="abpinn",
        description="Adaptive-basis physics-informed neural network experiments",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="train a single seed")
    _add_config_arg(p_run)
    p_run.add_argument("--out", help="output directory (default: config value)")
    p_run.add_argument("--seed", type=int, help="seed override (default: first configured)")

    p_sweep = sub.add_parser("sweep", help="train every configured seed")
    _add_config_arg(p_sweep)
    p_sweep.add_argument("--out", help="output directory (default: config value)")

    p_ref = sub.add_parser("reference", help="generate a spectral reference grid")
    p_ref.add_argument("--problem", required=True, choices=["allen_cahn", "kdv"])
    p_ref.add_argument("--out", help="output CSV path (default: references/<problem>.csv)")
    p_ref.add_argument("--force", action="store_true", help="regenerate even if present")
    p_ref.add_argument("--modes", type=int, help="Fourier modes (default per problem)")
    p_ref.add_argument("--dt", type=float, help="time step (default per problem)")
    p_ref.add_argument("--t-final", type=float, help="integration horizon (default 1)")
    p_ref.add_argument("--save-times", type=int, help="snapshot count (default 101)")

    p_val = sub.add_parser("validate-config", help="check a config file")
    _add_config_arg(p_val)

    args = parser.parse_args(argv)

    if args.verb == "validate-config":
        try:
            load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"invalid: {exc}", file=sys.stderr)
            return 1
        print("ok")
        return 0

    if args.verb == "reference":
        path = args.out or reference_path(args.problem)
        if os.path.exists(path) and not args.force:
            print(f"reference up to date: {path}")
            return 0
        cfg = default_config(ProblemName(args.problem))
        if args.modes or args.dt or args.t_final or args.save_times:
            cfg = SpectralConfig(
                cfg.problem,
                n_modes=args.modes or cfg.n_modes,
                dt=args.dt or cfg.dt,
                t_final=args.t_final or cfg.t_final,
                save_times=args.save_times or cfg.save_times,
            )
        try:
            grid = solve(cfg)
        except SolverDiverged as exc:
            print(f"solver diverged: {exc}", file=sys.stderr)
            return 1
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        save_grid(grid, path)
        print(f"wrote {path} ({grid.times.size} x {grid.xs.size})")
        return 0

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1

    if args.verb == "run":
        seeds = [args.seed if args.seed is not None else cfg.seeds[0]]
    else:
        seeds = list(cfg.seeds)
    rows = run_experiment(cfg, out_dir=args.out, seeds=seeds)
    failures = [r for r in rows if r["diverged"]]
    for r in rows:
        tag = f" DIVERGED: {r['diverged']}" if r["diverged"] else ""
        print(
            f"seed {r['seed']}: final_residual={r['final_residual']:.6g} "
            f"final_l2={r['final_l2']:.6g} subdomains={r['subdomains']}{tag}"
        )
    return 1 if len(failures) == len(rows) else 0


if __name__ == "__main__":
    raise SystemExit(main())
