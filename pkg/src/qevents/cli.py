"""Command-line entry point.

    qevents run (--config PATH | --scenario NAME) [--seed U64] [--threads N] [--out DIR]
    qevents validate --config PATH
    qevents report SUMMARY... [--csv PATH]
    qevents scenarios list

Exit codes: 0 success, 1 invalid input, 2 runtime failure. The output
directory is taken from --out, else $QEVENTS_OUT, else the config.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import U64_MAX, ConfigError, load_config, validate_dict
from .experiment import OUT_ENV, RunError, output_dir, run_experiment
from .report import report
from .scenarios import SCENARIOS, run_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64 - 1], got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qevents", description="Event-enhanced quantum counter simulations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config or a named scenario")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment config (JSON)")
    src.add_argument("--scenario", help="built-in scenario name (see 'scenarios list')")
    run.add_argument("--seed", type=_u64, help="base seed, overrides the config")
    run.add_argument("--threads", type=_positive, help="worker threads, overrides the config")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the config's output_dir)")
    run.add_argument("-n", "--trajectories", type=int, help="ensemble size, overrides the config")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)

    rep = sub.add_parser("report", help="merge run summaries into tables")
    rep.add_argument("summaries", nargs="+", help="summary.json files or run directories")
    rep.add_argument("--csv", help="also write the merged table as CSV")

    sc = sub.add_parser("scenarios", help="built-in scenarios")
    sc.add_argument("action", choices=["list"])
    return parser


def _run(args) -> int:
    if args.scenario:
        if args.scenario not in SCENARIOS:
            print(f"error: unknown scenario {args.scenario!r}", file=sys.stderr)
            return EXIT_VALIDATION
        out = args.out
        sc = SCENARIOS[args.scenario]
        if sc.config is not None and out is None:
            out = str(output_dir(sc.experiment_config(), None) / sc.name)
        result = run_scenario(args.scenario, out=out, seed=args.seed, threads=args.threads,
                              n_trajectories=args.trajectories)
        print(result.line())
        if out is not None and sc.config is not None:
            print(f"artifacts: {out}")
        return EXIT_OK if result.passed else EXIT_RUNTIME
    cfg = load_config(args.config)
    overrides = {"seed": args.seed, "threads": args.threads, "n_trajectories": args.trajectories}
    if any(v is not None for v in overrides.values()):
        d = cfg.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        cfg = validate_dict(d)
    out = output_dir(cfg, args.out)
    summary = run_experiment(cfg, out)
    print(f"{cfg.engine}: {summary.n_trajectories} trajectories in {summary.wall_clock:.2f} s -> {out}")
    if summary.first_click_mean is not None:
        print(f"first click mean {summary.first_click_mean:.6g} +- {summary.first_click_stderr:.2g}; "
              f"no-click fraction {summary.no_click_fraction:.4g}")
    for w in summary.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: {args.config} ({cfg.engine}, {cfg.n_trajectories} trajectories)")
            return EXIT_OK
        if args.command == "report":
            print(report(args.summaries, args.csv), end="")
            return EXIT_OK
        for sc in SCENARIOS.values():
            crit = ",".join(str(c) for c in sc.criteria)
            kind = sc.config["engine"] if sc.config else "check"
            print(f"{sc.name:28s} criterion {crit:3s} {kind:19s} {sc.description}")
        return EXIT_OK
    except ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError, OSError) as exc:
        if args.command == "report":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RunError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
