"""Command-line entry point.

    cronlab run --config cfg.json [--seed S] [--out DIR]
    cronlab run --experiment dispersive [--seed S] [--out DIR]
    cronlab report DIR
    cronlab dump-field FILE

Config files are JSON objects with the ExperimentConfig fields; CRONLAB_THREADS
sets the worker count for ensemble scans.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .errors import CronlabError
from .fieldio import read_field
from .grid import lebesgue_norm
from .harness import ExperimentConfig, all_passed, report_text, run


def _build_parser():
    parser = argparse.ArgumentParser(prog="cronlab",
                                     description="periodic-box harmonic-analysis experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment suite")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--experiment", help="suite name (when no config file is given)")
    p_run.add_argument("--seed", type=int, help="override the RNG seed")
    p_run.add_argument("--out", help="override the output directory")

    p_rep = sub.add_parser("report", help="print the stored summary of a run directory")
    p_rep.add_argument("dir")

    p_dump = sub.add_parser("dump-field", help="describe a binary field snapshot")
    p_dump.add_argument("file")
    return parser


def _cmd_run(args) -> int:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    elif args.experiment:
        config = ExperimentConfig(experiment=args.experiment)
    else:
        print("error: provide --config or --experiment", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    records, paths = run(config)
    sys.stdout.write(report_text(records, config.config_hash()))
    print(f"artifacts: {paths['csv']}  {paths['summary']}")
    return 0 if all_passed(records) else 1


def _cmd_report(args) -> int:
    path = os.path.join(args.dir, "summary.json")
    with open(path) as fh:
        payload = json.load(fh)
    records = payload["records"]
    failures = [r for r in records if not r["passed"]]
    print(f"experiment {payload['experiment']}  (config {payload['config_hash']})")
    for r in failures + [r for r in records if r["passed"]]:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['id']}: {r['value']}")
    print(f"{len(records) - len(failures)}/{len(records)} criteria passed")
    return 0 if not failures else 1


def _cmd_dump_field(args) -> int:
    field, ext = read_field(args.file)
    g = field.grid
    print(f"grid: n={g.n} N={g.N} L={g.L}  rep={field.rep}")
    if ext.size:
        print(f"extension block: {np.array2string(ext, precision=6)}")
    print(f"L2 norm: {lebesgue_norm(field, 2):.12g}")
    print(f"Linf norm: {lebesgue_norm(field, np.inf):.12g}")
    print(f"mean: {field.mean():.6g}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "dump-field":
            return _cmd_dump_field(args)
    except CronlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
