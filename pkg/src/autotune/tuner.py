"""Closed-loop tuning: sample, test, score, optimize, repeat until the budget is spent.

The loop is a deterministic replay engine. Every random choice comes from a
generator derived from ``(seed, round)`` for sampling or ``(seed, test_index)``
for measurement noise, so a run is fully determined by its job. Resuming
re-derives each round's batch, reuses the outcomes already in the history
file, and only runs the tests that are missing.

History file format (newline-delimited JSON)::

    {"type": "header", "format": "autotune-history/1", "version": ..., "schema_hash": ...,
     "seed": ..., "job": {...}}
    {"type": "test", "test_index": 0, "round": 0, "scope": "baseline", ...}
    {"type": "test", "test_index": 1, "round": 1, "scope": "whole", ...}
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from . import __version__
from .executor import ProcessTarget, SyntheticTarget, Target, TestOutcome, run_test, target_from_dict
from .optimizer import (
    Action,
    Optimizer,
    RoundDecision,
    RRSParams,
    Sample,
    find_best,
    make_optimizer,
)
from .sampler import SAMPLERS, SamplerState, draw_batch
from .space import (
    ConfigSetting,
    ParameterSpace,
    SpaceError,
    load_space,
    space_from_dict,
    validate,
)
from .utility import (
    UtilityError,
    UtilitySpec,
    check_metrics,
    evaluate_utility,
    orient_for_maximization,
    parse_utility,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

HISTORY_FORMAT = "autotune-history/1"
# fields excluded when comparing histories of replayed runs
VOLATILE_FIELDS = ("duration", "timestamp")

_SAMPLE_STREAM = 0
_NOISE_STREAM = 1


class JobError(ValueError):
    """Invalid tuning job definition."""


class HistoryError(ValueError):
    """Unreadable or inconsistent history file."""


class TuningAborted(RuntimeError):
    """The target could not produce a single usable test."""


@dataclass
class TuningJob:
    space: ParameterSpace
    target: Target
    utility: UtilitySpec
    budget: int
    set_size: int
    goal: str = "maximize"
    seed: int = 0
    baseline: ConfigSetting | None = None
    sampler: str = "dds"
    optimizer: str = "rbs"
    history_path: Path | None = None
    rrs_params: RRSParams | None = None

    def __post_init__(self) -> None:
        if self.set_size < 1:
            raise JobError("set_size must be >= 1")
        if self.budget < 1:
            raise JobError("budget must be >= 1")
        if self.set_size > self.budget:
            raise JobError(f"set_size ({self.set_size}) exceeds the budget ({self.budget})")
        if self.sampler not in SAMPLERS:
            raise JobError(f"unknown sampler {self.sampler!r}; choose from {sorted(SAMPLERS)}")
        if self.optimizer not in ("rbs", "rrs"):
            raise JobError(f"unknown optimizer {self.optimizer!r}; choose 'rbs' or 'rrs'")
        if self.baseline is not None:
            self.baseline = tuple(float(v) for v in self.baseline)
            bad = validate(self.space, self.baseline)
            if bad:
                raise JobError("baseline setting out of range: " + "; ".join(map(str, bad)))
        if self.history_path is not None:
            self.history_path = Path(self.history_path)
        declared = {m.name for m in self.target.declared_metrics}
        positive = {m.name for m in self.target.declared_metrics if m.positive}
        try:
            check_metrics(self.utility, declared)
            self.objective = orient_for_maximization(self.utility, self.goal, positive)
        except UtilityError as exc:
            raise JobError(str(exc)) from None
        if isinstance(self.target, ProcessTarget):
            self.target.check_placeholders(self.space)

    def describe(self) -> dict[str, Any]:
        """Job fields that must match for a history to be resumable."""
        return {
            "set_size": self.set_size,
            "sampler": self.sampler,
            "optimizer": self.optimizer,
            "goal": self.goal,
            "utility": str(self.utility),
            "baseline": list(self.baseline) if self.baseline is not None else None,
            "rrs": vars(self.rrs_params or RRSParams()) if self.optimizer == "rrs" else None,
        }


@dataclass(frozen=True)
class HistoryRecord:
    test_index: int
    round: int
    scope: str
    cell: tuple[int, ...] | None
    encoded: tuple[float, ...]
    decoded: dict[str, Any]
    metrics: dict[str, float]
    utility: float | None
    status: str
    reason: str | None = None
    bounds: list[list[float]] | None = None
    duration: float = 0.0
    timestamp: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "test",
                "test_index": self.test_index,
                "round": self.round,
                "scope": self.scope,
                "cell": list(self.cell) if self.cell is not None else None,
                "encoded": list(self.encoded),
                "decoded": self.decoded,
                "metrics": self.metrics,
                "utility": self.utility,
                "status": self.status,
                "reason": self.reason,
                "bounds": self.bounds,
                "duration": self.duration,
                "timestamp": self.timestamp,
            }
        )

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> HistoryRecord:
        cell = d["cell"]
        return cls(
            test_index=int(d["test_index"]),
            round=int(d["round"]),
            scope=str(d["scope"]),
            cell=tuple(int(c) for c in cell) if cell is not None else None,
            encoded=tuple(float(v) for v in d["encoded"]),
            decoded=dict(d["decoded"]),
            metrics={k: float(v) for k, v in d["metrics"].items()},
            utility=None if d["utility"] is None else float(d["utility"]),
            status=str(d["status"]),
            reason=d.get("reason"),
            bounds=d.get("bounds"),
            duration=float(d.get("duration", 0.0)),
            timestamp=str(d.get("timestamp", "")),
        )

    def to_sample(self) -> Sample:
        return Sample(
            self.encoded, self.metrics, self.utility, self.round, self.test_index,
            self.status, self.reason,
        )


@dataclass
class TuningResult:
    best: Sample | None
    history: list[HistoryRecord]
    decisions: list[RoundDecision] = field(default_factory=list)
    optimizer: Optimizer | None = None

    @property
    def baseline(self) -> HistoryRecord | None:
        return next((r for r in self.history if r.scope == "baseline"), None)

    def trajectory(self) -> list[tuple[int, float | None, int]]:
        return round_trajectory(self.history)


def round_trajectory(history: Sequence[HistoryRecord]) -> list[tuple[int, float | None, int]]:
    """(round, best utility so far, tests used so far) after each sampling round."""
    rows: list[tuple[int, float | None, int]] = []
    best: float | None = None
    used = 0
    for rnd in sorted({r.round for r in history}):
        for r in history:
            if r.round == rnd:
                used += 1
                if r.utility is not None and (best is None or r.utility > best):
                    best = r.utility
        if rnd > 0:
            rows.append((rnd, best, used))
    return rows


# --- history io ----------------------------------------------------------------


def _header(job: TuningJob) -> dict[str, Any]:
    return {
        "type": "header",
        "format": HISTORY_FORMAT,
        "version": __version__,
        "schema_hash": job.space.schema_hash(),
        "seed": job.seed,
        "job": job.describe(),
    }


def read_history(path: str | Path) -> tuple[dict[str, Any] | None, list[HistoryRecord]]:
    """Parse a history file, checking that test indices run 0, 1, 2, ...

    An empty file yields ``(None, [])``. Errors name the first bad line.
    """
    path = Path(path)
    header: dict[str, Any] | None = None
    records: list[HistoryRecord] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                if not isinstance(doc, dict):
                    raise ValueError("not an object")
                if lineno == 1 or header is None:
                    if doc.get("type") != "header" or doc.get("format") != HISTORY_FORMAT:
                        raise ValueError("expected a history header")
                    header = doc
                    continue
                if doc.get("type") != "test":
                    raise ValueError(f"unknown record type {doc.get('type')!r}")
                rec = HistoryRecord.from_dict(doc)
            except (ValueError, KeyError, TypeError) as exc:
                raise HistoryError(f"{path}:{lineno}: corrupt history record ({exc})") from None
            if rec.test_index != len(records):
                raise HistoryError(
                    f"{path}:{lineno}: test_index {rec.test_index} breaks the sequence "
                    f"(expected {len(records)})"
                )
            if records and rec.round < records[-1].round:
                raise HistoryError(f"{path}:{lineno}: round numbers go backwards")
            records.append(rec)
    return header, records


class _Writer:
    def __init__(self, path: Path | None, header: dict[str, Any] | None, append: bool):
        self.fh = None
        if path is None:
            return
        if append:
            self.fh = path.open("a")
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = path.open("w")
            self.fh.write(json.dumps(header) + "\n")
            self.fh.flush()

    def write(self, rec: HistoryRecord) -> None:
        if self.fh is not None:
            self.fh.write(rec.to_json() + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


# --- the loop ------------------------------------------------------------------


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stream, index])


def _score(job: TuningJob, outcome: TestOutcome) -> tuple[str, float | None, str | None]:
    if not outcome.ok:
        return "failed", None, outcome.reason
    try:
        return "ok", evaluate_utility(job.objective, outcome.metrics), None
    except UtilityError as exc:
        log.warning("utility could not be evaluated: %s", exc)
        return "failed", None, "parse_error"


def _execute(job: TuningJob, recorded: list[HistoryRecord], writer: _Writer) -> TuningResult:
    space = job.space
    opt = make_optimizer(job.optimizer, space, job.budget, job.set_size, job.rrs_params)
    history: list[HistoryRecord] = []
    decisions: list[RoundDecision] = []

    def test(setting, rnd, scope, cell, bounds) -> Sample:
        idx = len(history)
        if idx < len(recorded):
            rec = recorded[idx]
            if rec.encoded != tuple(setting) or rec.round != rnd or rec.scope != scope:
                raise HistoryError(
                    f"history record {idx} does not match the replayed run "
                    "(different job, seed or tool version?)"
                )
        else:
            outcome = run_test(
                job.target, space, setting, _rng(job.seed, _NOISE_STREAM, idx), f"test-{idx}"
            )
            status, utility, reason = _score(job, outcome)
            rec = HistoryRecord(
                test_index=idx,
                round=rnd,
                scope=scope,
                cell=tuple(cell) if cell is not None else None,
                encoded=tuple(setting),
                decoded=space.decode(setting),
                metrics=dict(outcome.metrics),
                utility=utility,
                status=status,
                reason=reason,
                bounds=bounds.to_list() if bounds is not None else None,
                duration=outcome.duration,
                timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
            )
            writer.write(rec)
        history.append(rec)
        return rec.to_sample()

    if job.baseline is not None:
        opt.ingest_baseline(test(job.baseline, 0, "baseline", None, None))

    whole = SamplerState(np.random.default_rng())
    decision = opt.first_decision()
    rnd = 1
    while decision.action is not Action.STOP:
        decisions.append(decision)
        sampling_rng = _rng(job.seed, _SAMPLE_STREAM, rnd)
        if decision.action is Action.SAMPLE_BOUNDED:
            state = SamplerState(sampling_rng)
        else:
            state = whole
            state.rng = sampling_rng
        batch = draw_batch(job.sampler, space, decision.batch_size, state, decision.bounds)
        batch = batch.truncated(decision.batch_size)
        samples = [
            test(s, rnd, decision.scope, c, decision.bounds)
            for s, c in zip(batch.settings, batch.cells)
        ]
        if rnd == 1 and not any(s.ok for s in samples) and opt.best is None:
            reasons = sorted({s.reason or "?" for s in samples})
            raise TuningAborted(
                f"every test of the first round failed ({', '.join(reasons)}); "
                "the target looks unusable"
            )
        decision = opt.step(samples)
        rnd += 1

    if len(history) < len(recorded):
        raise HistoryError(
            f"history holds {len(recorded)} tests but the job only produces {len(history)}"
        )
    best = find_best([r.to_sample() for r in history]) if any(
        r.status == "ok" for r in history
    ) else None
    return TuningResult(best, history, decisions, opt)


def run_tuning(job: TuningJob) -> TuningResult:
    """Run a fresh tuning job, writing its history if ``job.history_path`` is set."""
    writer = _Writer(job.history_path, _header(job), append=False)
    try:
        return _execute(job, [], writer)
    finally:
        writer.close()


def resume(job: TuningJob, history_path: str | Path | None = None) -> TuningResult:
    """Continue an interrupted run from its history file.

    The result equals that of an uninterrupted run of the same job.
    """
    path = Path(history_path or job.history_path)
    header, records = read_history(path)
    if header is None:
        return run_tuning(_with_history(job, path))
    if header.get("schema_hash") != job.space.schema_hash():
        raise HistoryError(
            f"{path}: parameter space does not match the history (schema hash "
            f"{header.get('schema_hash')} vs {job.space.schema_hash()})"
        )
    if header.get("seed") != job.seed or header.get("job") != json.loads(
        json.dumps(job.describe())
    ):
        raise HistoryError(f"{path}: job settings differ from those recorded in the history")
    writer = _Writer(path, None, append=True)
    try:
        return _execute(_with_history(job, path), records, writer)
    finally:
        writer.close()


def _with_history(job: TuningJob, path: Path) -> TuningJob:
    if job.history_path == path:
        return job
    return replace(job, history_path=path)


def stable_lines(path: str | Path) -> Iterator[str]:
    """History lines with volatile fields blanked, for replay comparisons."""
    with Path(path).open() as fh:
        for line in fh:
            doc = json.loads(line)
            for key in VOLATILE_FIELDS:
                if key in doc:
                    doc[key] = None
            yield json.dumps(doc)


# --- job files -------------------------------------------------------------------

_JOB_KEYS = {
    "space", "parameter", "target", "utility", "goal", "budget", "set_size", "seed",
    "baseline", "sampler", "optimizer", "history", "rrs",
}


def job_from_dict(
    doc: dict[str, Any], base_dir: str | Path = ".", default_seed: int = 0, **overrides
) -> TuningJob:
    """Build a job from a parsed job document; keyword overrides win over the file."""
    base_dir = Path(base_dir)
    unknown = sorted(set(doc) - _JOB_KEYS)
    if unknown:
        raise JobError(f"unknown job fields: {', '.join(unknown)}")
    try:
        tdoc = doc.get("target")
        if not isinstance(tdoc, dict):
            raise JobError("job needs a [target] table")
        target = target_from_dict(tdoc, base_dir)

        if "parameter" in doc:
            space = space_from_dict({"parameter": doc["parameter"]}, "job")
        elif "space" in doc:
            space = load_space(base_dir / doc["space"])
        elif isinstance(target, SyntheticTarget):
            space = target.landscape.space()
        else:
            raise JobError("job needs a space file or inline [[parameter]] tables")

        utility = parse_utility(str(doc.get("utility", target.declared_metrics[0].name)))
        baseline = doc.get("baseline")
        if baseline is not None:
            if not isinstance(baseline, dict):
                raise JobError("baseline must be a table of parameter values")
            baseline = space.encode(baseline)

        rrs = doc.get("rrs")
        rrs_params = RRSParams(**rrs) if isinstance(rrs, dict) else None

        values = {
            "budget": doc.get("budget"),
            "set_size": doc.get("set_size"),
            "seed": doc.get("seed", default_seed),
            "sampler": doc.get("sampler", "dds"),
            "optimizer": doc.get("optimizer", "rbs"),
            "goal": doc.get("goal", "maximize"),
            "history_path": base_dir / doc["history"] if "history" in doc else None,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("budget", "set_size", "seed"):
            if not isinstance(values[key], int) or isinstance(values[key], bool):
                raise JobError(f"{key} must be an integer")
        return TuningJob(
            space=space,
            target=target,
            utility=utility,
            baseline=baseline,
            rrs_params=rrs_params,
            **values,
        )
    except (SpaceError, UtilityError, TypeError, ValueError) as exc:
        if isinstance(exc, JobError):
            raise
        raise JobError(str(exc)) from None


def load_job(path: str | Path, default_seed: int = 0, **overrides) -> TuningJob:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise JobError(f"{path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise JobError(f"{path}: {exc}") from None
    try:
        return job_from_dict(doc, path.parent, default_seed, **overrides)
    except JobError as exc:
        raise JobError(f"{path}: {exc}") from None


__all__ = [
    "HistoryError",
    "HistoryRecord",
    "JobError",
    "TuningAborted",
    "TuningJob",
    "TuningResult",
    "job_from_dict",
    "load_job",
    "read_history",
    "resume",
    "round_trajectory",
    "run_tuning",
    "stable_lines",
]
