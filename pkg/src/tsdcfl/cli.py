"""Command line entry point: ``tsdcfl simulate|compare|verify|plot-data``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import coding, reporting
from .config import SCHEMES, ExperimentConfig
from .errors import ConfigError
from .simulator import run_experiment
from .verification import verify_baseline, verify_two_stage_grid

log = logging.getLogger("tsdcfl")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LEVELS.get(os.environ.get("TSDCFL_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _load_config(args) -> ExperimentConfig:
    if not Path(args.config).is_file():
        raise ConfigError({"config": f"file not found: {args.config}"})
    cfg = ExperimentConfig.load(args.config)
    over = {}
    for name in ("seed", "scheme", "epochs"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    cfg = cfg.with_overrides(**over)
    if getattr(args, "out", None):
        cfg.outputs.out_dir = args.out
    return cfg


def cmd_simulate(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(cfg)
    out = Path(cfg.outputs.out_dir)
    stem = f"{cfg.scheme}_seed{cfg.seed}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        reporting.write_report(report, out / f"{stem}_report.json")
        reporting.write_epoch_csv(report, out / f"{stem}_epochs.csv")
        reporting.write_trace_csv(report, out / f"{stem}_trace.csv")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    s = report.summary
    print(f"{cfg.scheme} seed={cfg.seed}: mean iteration time {s['mean_iteration_time']:.3f} slots, "
          f"final loss {s['final_loss']:.6g}, failed epochs {s['failed_epochs']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    schemes = args.schemes or list(SCHEMES)
    out = Path(cfg.outputs.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    reports, status = {}, EXIT_OK
    for scheme in schemes:
        reps = []
        for i in range(args.reps):
            try:
                c = cfg.with_overrides(scheme=scheme, seed=cfg.seed + i)
                c.outputs.trace = False
                reps.append(run_experiment(c))
            except ConfigError as exc:
                print(f"{scheme}: config error: {exc}", file=sys.stderr)
                status = EXIT_CONFIG
                break
        if reps:
            reports[scheme] = reps
    if not reports:
        return status
    try:
        rows = reporting.write_compare(reports, out / "compare.csv", out / "summary.csv")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{'scheme':<10} {'reps':>4} {'mean time':>10} {'std':>8} {'failed':>6}")
    for r in rows:
        print(f"{r['scheme']:<10} {r['reps']:>4} {r['mean_iteration_time']:>10.3f} {r['std_iteration_time']:>8.3f} {r['failed_epochs']:>6}")
    return status


def cmd_verify(args) -> int:
    res = verify_two_stage_grid(args.max_workers, args.max_partitions, args.max_s, corrupt=args.corrupt)
    Ks = range(1, args.max_partitions + 1)
    print(f"two-stage grid: {res.configs} codes, {res.patterns} straggler patterns")
    print("M  s  " + " ".join(f"K={k}" for k in Ks))
    for M in range(1, args.max_workers + 1):
        for s in range(args.max_s + 1):
            cells = " ".join(f"{'ok' if res.cells.get((M, k, s), True) else 'FAIL':>3}" for k in Ks)
            print(f"{M:<2} {s:<2} {cells}")
    failures = [str(w) for w in res.failures]
    for M, s in ((3, 1), (5, 1), (5, 2)):
        if M <= args.max_workers and s <= args.max_s:
            n, fails, _ = verify_baseline(coding.cyclic_repetition(M, s), s)
            failures += [f"cyclic M={M} s={s} stragglers={list(p)}: {why}" for p, why in fails]
            print(f"cyclic repetition M={M} s={s}: {n} patterns, {'ok' if not fails else 'FAIL'}")
    for M, s in ((4, 1), (6, 1), (6, 2)):
        if M <= args.max_workers and s <= args.max_s:
            n, fails, _ = verify_baseline(coding.fractional_repetition(M, s), s)
            failures += [f"fracrep M={M} s={s} stragglers={list(p)}: {why}" for p, why in fails]
            print(f"fractional repetition M={M} s={s}: {n} patterns, {'ok' if not fails else 'FAIL'}")
    if failures:
        print(f"{len(failures)} failing configurations, first witnesses:")
        for w in failures[:20]:
            print("  " + w)
        return EXIT_FAIL
    print("all checks passed")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    reports, status = [], EXIT_OK
    for path in args.reports:
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(reporting.report_from_json(fh.read()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            status = EXIT_IO
    if not reports:
        return EXIT_IO
    try:
        n = reporting.write_plot_data(reports, args.out)
    except OSError as exc:
        print(f"{args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {n} rows to {args.out}")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsdcfl", description="Two-stage coded training simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scheme and write its reports")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--scheme", choices=SCHEMES)
    sim.add_argument("--epochs", type=int)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    cmp_ = sub.add_parser("compare", help="run every scheme on shared seeds")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--reps", type=int, default=1)
    cmp_.add_argument("--schemes", nargs="+", choices=SCHEMES)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    ver = sub.add_parser("verify", help="exhaustive decode checks over a grid of codes")
    ver.add_argument("--max-workers", type=int, default=6)
    ver.add_argument("--max-partitions", type=int, default=8)
    ver.add_argument("--max-s", type=int, default=2)
    ver.add_argument("--corrupt", action="store_true", help="wipe a column of every code (negative control)")
    ver.set_defaults(func=cmd_verify)

    plot = sub.add_parser("plot-data", help="merge reports into long-format CSV")
    plot.add_argument("reports", nargs="+")
    plot.add_argument("--out", default="plot_data.csv")
    plot.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
