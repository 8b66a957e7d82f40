"""Command-line entry point: ``train``, ``theory``, ``sweep`` and ``check``."""

from __future__ import annotations

import argparse
import copy
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import theory
from .diagnostics import run_checks
from .harness import ConfigError, ExperimentConfig, RunLog, apply_overrides, load_config, run_parallel, write_run

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3, 4

log = logging.getLogger("aela_marl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--algo", choices=["vdn", "qmix"])
    p.add_argument("--aela", choices=["on", "off", "auto"], help="auto: on with the recommended window")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--workers", type=int, default=1, help="parallel processes over runs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aela-marl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train over one or more seeds")
    _common(train)
    train.add_argument("--seed", type=int, action="append", help="repeatable; defaults to run.seeds")

    th = sub.add_parser("theory", help="numerical checks of the dead-end analysis")
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--quick", action="store_true", help="10x fewer instances")
    th.add_argument("--out", metavar="FILE", help="write CSV here instead of stdout")

    sw = sub.add_parser("sweep", help="grid over penalty x algorithm x AELA on/off x seeds")
    _common(sw)
    sw.add_argument("--seed", type=int, action="append", help="repeatable; defaults to run.seeds")
    sw.add_argument("--penalties", default="-2,-4")
    sw.add_argument("--algos", default="vdn,qmix")
    sw.add_argument("--aela-modes", default="on", help="comma list from on,off,auto")

    ck = sub.add_parser("check", help="gradient and invariant self-checks")
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--instances", type=int, default=100)
    ck.add_argument("--out", metavar="FILE")
    return parser


def _overrides(args) -> dict[str, str]:
    flat: dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key.strip()] = value
    if args.algo:
        flat["algo"] = args.algo
    if args.aela:
        flat["aela.enabled"] = "false" if args.aela == "off" else "true"
        if args.aela == "auto":
            flat["aela.window"] = "auto"
    if args.out:
        flat["run.out"] = args.out
    return flat


def _run_jobs(jobs: list[tuple[ExperimentConfig, int, str]], workers: int) -> list[tuple[str, bool]]:
    logs = run_parallel([(cfg, seed) for cfg, seed, _ in jobs], workers)
    for (_, _, out_dir), runlog in zip(jobs, logs):
        write_run(runlog, out_dir)
    return [(out_dir, runlog.diverged) for (_, _, out_dir), runlog in zip(jobs, logs)]


def _write_checks(checks, out: str | None) -> int:
    text = theory.checks_to_csv(checks)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    seeds = args.seed or cfg.run.seeds
    root = Path(cfg.run.out)
    jobs = [(cfg, s, str(root / f"seed{s}")) for s in seeds]
    results = _run_jobs(jobs, args.workers)
    for out_dir, diverged in results:
        print(f"{out_dir}{'  DIVERGED' if diverged else ''}")
    return EXIT_DIVERGED if any(d for _, d in results) else EXIT_OK


def _aggregate(rows_by_cell: dict[tuple, list[RunLog]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["penalty", "algo", "aela", "step", "median_test_return", "median_success_rate", "median_e_l", "n_runs"])
        for (penalty, algo, mode), logs in rows_by_cell.items():
            n = min(len(lg.rows) for lg in logs)
            for i in range(n):
                rows = [lg.rows[i] for lg in logs]
                writer.writerow(
                    [
                        penalty,
                        algo,
                        mode,
                        int(np.median([r.step for r in rows])),
                        repr(float(np.median([r.test_return_median for r in rows]))),
                        repr(float(np.median([r.success_rate for r in rows]))),
                        repr(float(np.median([r.e_l for r in rows]))),
                        len(rows),
                    ]
                )


def cmd_sweep(args) -> int:
    base = load_config(args.config, _overrides(args))
    seeds = args.seed or base.run.seeds
    try:
        penalties = [float(p) for p in args.penalties.split(",") if p.strip()]
    except ValueError as e:
        raise ConfigError(f"--penalties: {e}") from e
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    modes = [m.strip() for m in args.aela_modes.split(",") if m.strip()]
    if any(m not in ("on", "off", "auto") for m in modes):
        raise ConfigError(f"--aela-modes must list on/off/auto, got {args.aela_modes!r}")
    root = Path(base.run.out)
    jobs, cells = [], {}
    for penalty in penalties:
        for algo in algos:
            for mode in modes:
                cfg = copy.deepcopy(base)
                flat = {"mpp.penalty": repr(penalty), "algo": algo, "aela.enabled": "false" if mode == "off" else "true"}
                if mode == "auto":
                    flat["aela.window"] = "auto"
                apply_overrides(cfg, flat)
                tag = f"P{penalty:g}_{algo}_aela-{mode}"
                cells[(penalty, algo, mode)] = [str(root / tag / f"seed{s}") for s in seeds]
                jobs.extend((cfg, s, str(root / tag / f"seed{s}")) for s in seeds)
    results = dict(_run_jobs(jobs, args.workers))
    logs = {k: [RunLog.from_json((Path(d) / "runlog.json").read_text()) for d in dirs] for k, dirs in cells.items()}
    _aggregate(logs, root / "aggregate_medians.csv")
    print(root / "aggregate_medians.csv")
    return EXIT_DIVERGED if any(results.values()) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "theory":
            return _write_checks(theory.run_suite(args.seed, args.quick), args.out)
        if args.command == "check":
            return _write_checks(run_checks(args.seed, args.instances), args.out)
    except (ConfigError, OSError) as e:
        print(f"aela-marl: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
