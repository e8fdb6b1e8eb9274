"""Command-line entry point: ``cond2st simulate | test | calibrate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
from scipy.stats import kstest

from .core import InvalidData, make_rng
from .harness import (
    FORMATS,
    ConfigError,
    GroupMissing,
    ParseError,
    collect_statistics,
    default_jobs,
    emit_report,
    load_csv,
    load_plan,
    resolve_method,
    run_monte_carlo,
)
from .synth import ScenarioConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _scenario(text: str, hypothesis: str, n: int, p: int) -> ScenarioConfig:
    text = text.strip().upper()
    if len(text) != 3:
        raise ConfigError(f"scenario must look like S1U or S2B, got {text!r}")
    try:
        return ScenarioConfig(text[:2], text[2], hypothesis, n=n, p=p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(args) -> int:
    plan = load_plan(args.plan)
    jobs = args.jobs if args.jobs is not None else max(plan.jobs, default_jobs())
    summaries = run_monte_carlo(plan, jobs=jobs)
    out = emit_report(summaries, args.out, args.format, figure=not args.no_figure)
    print(out.read_text(), end="")
    return EXIT_OK


def cmd_test(args) -> int:
    method = resolve_method(args.method)
    x_cols = args.x_cols.split(",") if args.x_cols else None
    data = load_csv(args.data, args.y_col, x_cols, args.group_col, path2=args.data2)
    res = method(data, make_rng(args.seed, 0), args.alpha, None)
    print(json.dumps(res.as_dict(), indent=2, default=float))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _scenario(args.scenario, "null", args.n, args.p)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    stats, rejects = collect_statistics(args.method, cfg, args.reps, args.seed, args.alpha, jobs)
    finite = stats[np.isfinite(stats)]
    ks = kstest(finite, "norm") if finite.size else None
    summary = {
        "method": args.method,
        "scenario": cfg.id,
        "n": cfg.n,
        "reps": args.reps,
        "size": float(rejects.mean()),
        "mean": float(finite.mean()) if finite.size else float("nan"),
        "sd": float(finite.std(ddof=1)) if finite.size > 1 else float("nan"),
        "ks_statistic": float(ks.statistic) if ks else float("nan"),
        "ks_pvalue": float(ks.pvalue) if ks else float("nan"),
        "non_finite": int(stats.size - finite.size),
    }
    if args.out:
        np.savetxt(args.out, stats, header="statistic", comments="", fmt="%.10g")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cond2st", description="Conditional two-sample tests and Monte Carlo experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run an experiment plan and write a rejection-rate report")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=FORMATS, default="csv")
    sp.add_argument("--jobs", type=int, default=None)
    sp.add_argument("--no-figure", action="store_true", help="skip the PNG written next to the report")
    sp.set_defaults(func=cmd_simulate)

    tp = sub.add_parser("test", help="run one test on CSV data")
    tp.add_argument("--method", required=True)
    tp.add_argument("--data", required=True)
    tp.add_argument("--data2", default=None, help="second population; omit to split --data by --group-col")
    tp.add_argument("--y-col", default="y")
    tp.add_argument("--x-cols", default=None, help="comma-separated; default all other columns")
    tp.add_argument("--group-col", default="group")
    tp.add_argument("--alpha", type=float, default=0.05)
    tp.add_argument("--seed", type=int, default=0)
    tp.set_defaults(func=cmd_test)

    cp = sub.add_parser("calibrate", help="null statistics of a method and a KS check against N(0, 1)")
    cp.add_argument("--method", required=True)
    cp.add_argument("--scenario", default="S1U")
    cp.add_argument("--n", type=int, default=1000)
    cp.add_argument("--p", type=int, default=10)
    cp.add_argument("--reps", type=int, default=500)
    cp.add_argument("--alpha", type=float, default=0.05)
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--jobs", type=int, default=None)
    cp.add_argument("--out", default=None, help="write the statistic sample here")
    cp.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if not 0 < getattr(args, "alpha", 0.05) < 1:
            raise ConfigError("alpha must be in (0, 1)")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, GroupMissing, InvalidData) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        code = EXIT_CONFIG if args.command == "simulate" else EXIT_DATA
        print(f"{'config' if code == EXIT_CONFIG else 'data'} error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
