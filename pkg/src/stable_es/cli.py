"""Command line entry point: ``stable-es <command> [options]``.

Exit status is 0 on success, 1 for configuration errors and 2 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .distributions import estimate_gamma

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _common(p):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides config seeds")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="dotted config override, e.g. optimizer.max_iters=10 (repeatable)",
    )


def build_parser():
    ap = argparse.ArgumentParser(prog="stable-es", description="Stability-guaranteed policy search.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the optimizer for every seed")
    _common(p)

    p = sub.add_parser("eval", help="roll a checkpoint out from random initial positions")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="policy or distribution JSON")
    p.add_argument("--task", help="task name (defaults to the config task)")
    p.add_argument("--n-initials", type=int, default=5)

    p = sub.add_parser("entropy-scan", help="Wishart entropy over a nu grid at a fixed mean")
    _common(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--nu-max", type=float, default=1e4)

    p = sub.add_parser("excursion-stats", help="|s| quantiles over early training rollouts")
    _common(p)
    p.add_argument("--iters", type=int, default=10)

    p = sub.add_parser("gamma", help="print the fitted gamma for each dimension")
    _common(p)
    p.add_argument("--dim", type=int, action="append", required=True)
    return ap


def _seeds(args, cfg):
    return args.seed if args.seed else cfg["seeds"]


def cmd_train(args):
    cfg = harness.load_config(args.config, args.override)
    for seed in _seeds(args, cfg):
        path = harness.train(cfg, seed, args.out)
        summary = json.loads((path / "summary.json").read_text())
        print(
            f"{path}  iterations={summary['iterations']}  stop={summary['stop_reason']}  "
            f"max_success={summary['max_success_rate']}"
        )
    return EXIT_OK


def cmd_eval(args):
    overrides = list(args.override)
    if args.task:
        overrides.append(f"task.name={args.task}")
    cfg = harness.load_config(args.config, overrides)
    if args.n_initials < 0:
        raise harness.ConfigError("--n-initials must be >= 0")
    policy = harness.load_checkpoint(args.checkpoint)
    env = harness.env_config(cfg)
    seed = _seeds(args, cfg)[0]
    rows = harness.evaluate(policy, env, args.n_initials, args.out, seed, cfg["eval"].get("box"))
    n_ok = sum(r["success"] for r in rows)
    print(f"{len(rows)} initials, {n_ok} successful; summary in {Path(args.out) / 'eval_summary.csv'}")
    for r in rows:
        print(f"  #{r['index']}  final |s| = {r['final_dist']:.4g} m  success={bool(r['success'])}")
    return EXIT_OK


def cmd_entropy_scan(args):
    if args.dim < 1:
        raise harness.ConfigError("--dim must be >= 1")
    seed = args.seed[0] if args.seed else None
    out = Path(args.out) / f"entropy_scan_D{args.dim}.csv"
    try:
        fit = harness.write_entropy_scan(args.dim, out, args.points, args.nu_max, seed)
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from exc
    print(f"D={args.dim}  gamma={fit.gamma:.6g}  R^2={fit.r2:.6f}  table={out}")
    return EXIT_OK


def cmd_excursion_stats(args):
    if args.iters < 0:
        raise harness.ConfigError("--iters must be >= 0")
    cfg = harness.load_config(args.config, args.override)
    seed = _seeds(args, cfg)[0]
    out = Path(args.out) / "excursion_stats.csv"
    _, rows = harness.excursion_stats(cfg, args.iters, out, seed)
    limit = harness.env_config(cfg).workspace_limit
    peak = max((r[-1] for r in rows), default=0.0)
    print(f"{len(rows)} iterations, max |s| = {peak:.4g} m (guard {limit} m); table={out}")
    return EXIT_OK


def cmd_gamma(args):
    for d in args.dim:
        if d < 1:
            raise harness.ConfigError("--dim must be >= 1")
        fit = estimate_gamma(d)
        print(f"D={d}  gamma={fit.gamma:.6g}  slope={fit.slope:.6g}  intercept={fit.intercept:.6g}  R^2={fit.r2:.6f}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "entropy-scan": cmd_entropy_scan,
    "excursion-stats": cmd_excursion_stats,
    "gamma": cmd_gamma,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
