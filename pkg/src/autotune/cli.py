"""Command-line front end.

Exit codes: 0 success, 2 bad job file / usage / corrupt history, 3 the target
was unusable and tuning aborted. Results go to stdout, diagnostics to stderr.

Seed precedence: ``--seed`` beats the job file's ``seed``, which beats the
``AUTOTUNE_SEED`` environment variable, which beats 0.
"""

from __future__ import annotations

import argparse
import collections
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .diagnostics import (
    ComparisonConfig,
    DiagnosticsError,
    compare_strategies,
    empirical_phi,
    parse_strategy,
)
from .executor import TargetError
from .landscapes import LandscapeError, get_landscape, list_landscapes
from .optimizer import Sample
from .sampler import SAMPLERS
from .space import Bounds, SpaceError
from .tuner import (
    HistoryError,
    JobError,
    TuningAborted,
    TuningResult,
    load_job,
    read_history,
    resume,
    round_trajectory,
    run_tuning,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORT = 3

log = logging.getLogger("autotune")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _env_seed() -> int:
    raw = os.environ.get("AUTOTUNE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"AUTOTUNE_SEED must be an integer, got {raw!r}") from None


def _job_overrides(args: argparse.Namespace) -> dict:
    return {
        "budget": args.budget,
        "set_size": args.set_size,
        "seed": args.seed,
        "sampler": args.sampler,
        "optimizer": args.optimizer,
        "history_path": Path(args.history) if args.history else None,
    }


def _print_best(best: Sample | None, result: TuningResult, job) -> None:
    tests = len(result.history)
    failed = sum(1 for r in result.history if r.status != "ok")
    print(f"tests: {tests} of {job.budget} ({failed} failed)")
    if best is None:
        print("best: none (no successful test)")
        return
    print(f"best utility: {best.utility!r} (test {best.test_index}, round {best.round})")
    for name, value in job.space.decode(best.setting).items():
        print(f"  {name} = {value!r}")
    if job.history_path:
        print(f"history: {job.history_path}")


def cmd_tune(args: argparse.Namespace) -> int:
    job = load_job(args.job, default_seed=_env_seed(), **_job_overrides(args))
    result = run_tuning(job)
    _print_best(result.best, result, job)
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    overrides = _job_overrides(args)
    job = load_job(args.job, default_seed=_env_seed(), **overrides)
    if job.history_path is None:
        raise UsageError("resume needs a history file (--history or 'history' in the job)")
    result = resume(job, job.history_path)
    _print_best(result.best, result, job)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    strategies = tuple(parse_strategy(s) for s in args.strategies.split(",") if s.strip())
    landscapes = tuple(s.strip() for s in args.landscape.split(",") if s.strip())
    seed = args.seed if args.seed is not None else _env_seed()
    config = ComparisonConfig(
        strategies, landscapes, args.set_size, args.rounds, args.trials, seed, args.noise
    )
    report = compare_strategies(config)
    if args.out:
        report.write_csv(args.out)
        print(f"wrote {len(report.rows)} rows to {args.out}")
    else:
        report.write_csv(sys.stdout)
    if args.summary:
        report.write_summary_csv(args.summary)
    for row in report.summary():
        if row["round"] == config.rounds:
            print(
                f"# {row['strategy']} on {row['landscape']}: median {row['median']:.6g} "
                f"IQR [{row['q1']:.6g}, {row['q3']:.6g}] over {row['trials']} trials",
                file=sys.stderr if not args.out else sys.stdout,
            )
    return EXIT_OK


def _parse_subspace(text: str | None, dimension: int) -> Bounds | None:
    if not text:
        return None
    try:
        pairs = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"bad --subspace {text!r}; expected lo:hi,lo:hi,...") from None
    if any(len(p) != 2 for p in pairs) or len(pairs) != dimension:
        raise UsageError(f"--subspace needs {dimension} lo:hi pairs")
    try:
        return Bounds(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
    except ValueError as exc:
        raise UsageError(f"bad --subspace: {exc}") from None


def cmd_phi(args: argparse.Namespace) -> int:
    land = get_landscape(args.landscape)
    sub = _parse_subspace(args.subspace, land.dimension)
    est = empirical_phi(args.landscape, sub, args.y0, args.resolution, args.denominator)
    print(f"phi = {est.phi!r}")
    print(f"landscape: {args.landscape}  y0: {args.y0!r}  resolution: {args.resolution}")
    print(f"subspace: {est.subspace.to_list()}  cells: {est.points}  denominator: {est.denominator}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    header, records = read_history(args.history)
    if not records:
        print("no tests recorded")
        return EXIT_OK
    print("round  best_utility  tests_used")
    for rnd, best, used in round_trajectory(records):
        shown = "-" if best is None else f"{best:.10g}"
        print(f"{rnd:>5}  {shown:>12}  {used:>10}")
    base = next((r for r in records if r.scope == "baseline"), None)
    if base is not None:
        print(f"baseline utility: {base.utility!r} ({base.status})")
    failures = collections.Counter(r.reason for r in records if r.status != "ok")
    print(f"total tests: {len(records)}")
    if failures:
        print("failures: " + ", ".join(f"{k}={v}" for k, v in sorted(failures.items())))
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        print("best: none (no successful test)")
        return EXIT_OK
    best = min(ok, key=lambda r: (-r.utility, r.test_index))
    print(f"best utility: {best.utility!r} (test {best.test_index}, round {best.round})")
    for name, value in best.decoded.items():
        print(f"  {name} = {value!r}")
    return EXIT_OK


def _add_job_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("job", help="job file (TOML)")
    p.add_argument("--budget", type=_positive_int, help="total number of tests (default: job file)")
    p.add_argument("--set-size", type=_positive_int, help="tests per round (default: job file)")
    p.add_argument(
        "--seed", type=int, help="run seed (default: job file, then AUTOTUNE_SEED, then 0)"
    )
    p.add_argument("--sampler", choices=sorted(SAMPLERS), help="sampler (default: job file, then dds)")
    p.add_argument("--optimizer", choices=["rbs", "rrs"], help="optimizer (default: job file, then rbs)")
    p.add_argument("--history", help="history file path (default: job file, else none)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autotune", description="Budget-bounded configuration tuning."
    )
    parser.add_argument("--version", action="version", version=f"autotune {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("tune", help="run a tuning job")
    _add_job_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("resume", help="continue an interrupted tuning job from its history")
    _add_job_flags(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("compare", help="compare strategies on synthetic landscapes")
    p.add_argument(
        "--landscape", default="bumpy",
        help=f"comma-separated landscape ids (default: bumpy; known: {', '.join(list_landscapes())})",
    )
    p.add_argument(
        "--strategies", default="dds+rbs,uniform+rbs,grid+rbs,lhs+rbs",
        help="comma-separated sampler+optimizer pairs (default: dds+rbs,uniform+rbs,grid+rbs,lhs+rbs)",
    )
    p.add_argument("--set-size", type=_positive_int, default=100, help="tests per round (default: 100)")
    p.add_argument("--rounds", type=_positive_int, default=2, help="rounds per trial (default: 2)")
    p.add_argument("--trials", type=_positive_int, default=50, help="seeded trials (default: 50)")
    p.add_argument("--seed", type=int, help="seed of the first trial (default: AUTOTUNE_SEED, then 0)")
    p.add_argument("--noise", type=float, default=0.0, help="relative measurement noise (default: 0)")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--summary", help="median/IQR summary CSV path (default: none)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("phi", help="grid estimate of the share of a subspace at or below y0")
    p.add_argument("--landscape", required=True, help="landscape id")
    p.add_argument("--y0", type=float, required=True, help="reference performance value")
    p.add_argument("--resolution", type=int, default=200, help="grid points per dimension (default: 200)")
    p.add_argument("--subspace", help="lo:hi per dimension, comma-separated (default: whole space)")
    p.add_argument(
        "--denominator", choices=["whole", "subspace"], default="whole",
        help="normalize by the whole space or by the subspace (default: whole)",
    )
    p.set_defaults(func=cmd_phi)

    p = sub.add_parser("report", help="summarize a history file")
    p.add_argument("history", help="history file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except TuningAborted as exc:
        print(f"autotune: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (
        UsageError, JobError, HistoryError, TargetError, SpaceError, LandscapeError,
        DiagnosticsError, OSError,
    ) as exc:
        print(f"autotune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
