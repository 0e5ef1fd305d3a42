"""Command-line front end.

Subcommands:

* ``run --config FILE [--seed S] [--out DIR] [--parallel W]`` executes the
  declared check suite and writes results.csv plus manifest.json.
* ``list-scenarios`` prints the registry with parameters and checks.
* ``validate --config FILE`` parses and validates without running.

Exit codes: 0 success, 1 a declared check failed, 2 configuration error,
3 numerical failure.  The environment variable MVGRAD_MEMORY_BUDGET_MB
caps retained path storage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import load_config
from .errors import ConfigError
from .runner import resolve_bundle, run_experiment
from .scenarios import all_scenarios
from .simulate import MEMORY_BUDGET_ENV


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvgrad",
        description="particle-system derivative estimation and verification suites",
        epilog=f"memory budget: set {MEMORY_BUDGET_ENV} (MB) to cap retained paths",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a configured check suite")
    run_p.add_argument("--config", required=True, help="INI config file")
    run_p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    run_p.add_argument("--out", default=None, help="override output directory")
    run_p.add_argument("--parallel", type=int, default=None,
                       help="run checks concurrently with this many workers")

    sub.add_parser("list-scenarios", help="print the scenario registry")

    val_p = sub.add_parser("validate", help="parse and validate a config file")
    val_p.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    try:
        cfg, text = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.parallel is not None:
            overrides["parallel"] = args.parallel
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
            cfg.validate()
        out_dir = args.out if args.out is not None else cfg.out_dir
        resolve_bundle(cfg)  # surfaces scenario/horizon problems before running
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    result = run_experiment(cfg, text, out_dir)
    n = len(result.rows)
    print(f"wrote {result.csv_path} ({n} rows), exit {result.exit_code}")
    if result.errors:
        print(json.dumps({"error": "numerical", "records": result.errors}),
              file=sys.stderr)
    return result.exit_code


def _cmd_list_scenarios() -> int:
    print(f"{'name':<16} {'d':>2}  {'family':<15} {'checks'}")
    print("-" * 78)
    for scen in all_scenarios():
        params = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in sorted(scen.params.items()))
        print(f"{scen.name:<16} {scen.d:>2}  {scen.family:<15} {', '.join(scen.checks)}")
        print(f"{'':<16} {'':>2}  {params:<15}")
        print(f"{'':<16} {'':>2}  {scen.description}")
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg, _ = load_config(args.config)
        resolve_bundle(cfg)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    print(f"ok: scenario={cfg.scenario} N={cfg.n_particles} n_steps={cfg.n_steps} t={cfg.t}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "list-scenarios":
        return _cmd_list_scenarios()
    if args.command == "validate":
        return _cmd_validate(args)
    parser.print_usage(sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
