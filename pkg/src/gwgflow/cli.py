"""Command-line entry point: ``gwgflow run | verify | compare``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import PRESETS, ConfigError, load_config, preset
from .runner import thread_limit

log = logging.getLogger("gwgflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _cmd_run(args) -> int:
    from .runner import run_experiment

    if (args.config is None) == (args.preset is None):
        print("error: give exactly one of --config or --preset", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = preset(args.preset, desk_scale=args.desk_scale)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed: must be an unsigned 64-bit integer")
            cfg.seed = args.seed
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.name}-seed{cfg.seed}"
    code = run_experiment(cfg, out)
    if code == 0:
        print(f"wrote {out}")
    return code


def _cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    with thread_limit():
        rows = run_checks()
    print(format_table(rows))
    n_fail = sum(not r.passed for r in rows)
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    if args.report:
        Path(args.report).write_text(json.dumps([r.to_dict() for r in rows], indent=1))
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def read_metrics(run_dir: Path):
    with open(run_dir / "metrics.csv", newline="") as fh:
        return [(int(r["iter"]), r["metric_name"], r["value"]) for r in csv.DictReader(fh)]


def merge_runs(run_dirs: Sequence[Path]):
    """Long-format rows ``(method, iter, metric, value)``; method is the run directory name."""
    if len(run_dirs) < 2:
        raise ConfigError("compare: need at least two run directories")
    labels = [Path(d).name for d in run_dirs]
    if len(set(labels)) != len(labels):
        raise ConfigError("compare: run directory names must be distinct")
    tables = [read_metrics(Path(d)) for d in run_dirs]
    sets = [sorted({m for _, m, _ in t}) for t in tables]
    for label, names in zip(labels[1:], sets[1:]):
        if names != sets[0]:
            missing = sorted(set(sets[0]) - set(names))
            extra = sorted(set(names) - set(sets[0]))
            raise ConfigError(f"compare: metric sets differ between {labels[0]} and {label}: "
                              f"missing {missing}, extra {extra}")
    return [(label, it, name, value) for label, t in zip(labels, tables)
            for it, name, value in t]


def _cmd_compare(args) -> int:
    try:
        rows = merge_runs([Path(d) for d in args.run_dirs])
    except (ConfigError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("method", "iter", "metric", "value"))
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwgflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="YAML experiment config")
    run.add_argument("--preset", choices=PRESETS, help="built-in experiment")
    run.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--desk-scale", action="store_true",
                     help="shrink a preset to laptop scale")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run the oracle suite")
    ver.add_argument("--report", help="write the JSON report here")
    ver.set_defaults(func=_cmd_verify)

    cmp_ = sub.add_parser("compare", help="merge run directories into a long CSV")
    cmp_.add_argument("run_dirs", nargs="*")
    cmp_.add_argument("--out", help="output CSV (default stdout)")
    cmp_.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare" and not args.run_dirs:
        parser.error("compare: at least two run directories are required")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
