"""Running one test of one configuration setting against a target.

Two kinds of target exist:

* ``SyntheticTarget`` evaluates a closed-form landscape and optionally adds
  Gaussian noise with a relative standard deviation.
* ``ProcessTarget`` drives a real system through shell commands.

Process protocol
----------------
The decoded setting is exposed either as environment variables
``CONF_<name>`` (``render = "env"``) or as a file of ``<name>=<value>``
lines in declaration order (``render = "file"``). Booleans render as
``true``/``false`` and categoricals as their label. Commands may reference
``{<name>}`` placeholders (shell-quoted values) and ``{config_file}``.

``setup`` then ``test`` run under the timeout; ``teardown`` always runs.
Metrics come from the last non-empty stdout line of ``test`` (or of a results
file) written as space-separated ``<name>=<number>`` pairs. Exit code 0 is
success; a timeout kills the whole process group.
"""

from __future__ import annotations

import math
import os
import shlex
import re
import signal
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .landscapes import Landscape, get_landscape
from .space import ParameterSpace

FAIL_REASONS = ("nonzero_exit", "timeout", "parse_error", "setup_error")

# ``{name}`` but not shell ``${VAR}``; awk bodies and brace lists never match
PLACEHOLDER_RE = re.compile(r"(?<!\$)\{([A-Za-z_][A-Za-z0-9_.\-]*)\}")


class TargetError(ValueError):
    pass


@dataclass(frozen=True)
class MetricDecl:
    name: str
    positive: bool = False


@dataclass(frozen=True)
class TestOutcome:
    status: str
    metrics: dict[str, float] = field(default_factory=dict)
    duration: float = 0.0
    reason: str | None = None
    log: str | None = None

    # keep pytest from collecting this class
    __test__ = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _failed(reason: str, duration: float, log: str | None = None) -> TestOutcome:
    assert reason in FAIL_REASONS
    return TestOutcome("failed", {}, duration, reason, log)


@dataclass(frozen=True)
class SyntheticTarget:
    landscape_id: str
    noise: float = 0.0
    repetitions: int = 1
    kind: str = field(default="synthetic", init=False)

    def __post_init__(self) -> None:
        if self.noise < 0:
            raise TargetError("noise must be >= 0")
        if self.repetitions < 1:
            raise TargetError("repetitions must be >= 1")
        get_landscape(self.landscape_id)

    @property
    def landscape(self) -> Landscape:
        return get_landscape(self.landscape_id)

    @property
    def declared_metrics(self) -> tuple[MetricDecl, ...]:
        return tuple(MetricDecl(m, True) for m in self.landscape.metrics())

    exclusive = False


@dataclass(frozen=True)
class ProcessTarget:
    test_command: str
    declared_metrics: tuple[MetricDecl, ...]
    setup_command: str | None = None
    teardown_command: str | None = None
    render: str = "env"
    config_file: str | None = None
    metrics_source: str = "stdout"
    results_file: str | None = None
    timeout: float = 600.0
    repetitions: int = 1
    workdir: str | None = None
    log_dir: str | None = None
    kind: str = field(default="process", init=False)

    exclusive = True

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise TargetError("timeout must be > 0")
        if not self.declared_metrics:
            raise TargetError("a process target must declare at least one metric")
        if self.render not in ("env", "file"):
            raise TargetError("render must be 'env' or 'file'")
        if self.render == "file" and not self.config_file:
            raise TargetError("render = 'file' needs config_file")
        if self.metrics_source not in ("stdout", "file"):
            raise TargetError("metrics must come from 'stdout' or 'file'")
        if self.metrics_source == "file" and not self.results_file:
            raise TargetError("metrics = 'file' needs results_file")
        if self.repetitions < 1:
            raise TargetError("repetitions must be >= 1")

    def check_placeholders(self, space: ParameterSpace) -> None:
        allowed = set(space.names) | {"config_file"}
        for cmd in (self.setup_command, self.test_command, self.teardown_command):
            for name in PLACEHOLDER_RE.findall(cmd or ""):
                if name not in allowed:
                    raise TargetError(f"command placeholder {{{name}}} is not a parameter")


Target = SyntheticTarget | ProcessTarget


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_lines(native: Mapping[str, Any]) -> str:
    return "".join(f"{k}={render_value(v)}\n" for k, v in native.items())


def parse_metrics(line: str, declared: Sequence[MetricDecl]) -> dict[str, float]:
    """Parse ``name=number`` pairs, requiring every declared metric."""
    values: dict[str, float] = {}
    for token in line.split():
        name, eq, raw = token.partition("=")
        if not eq or not name:
            raise ValueError(f"malformed metric token {token!r}")
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"metric {name!r} is not finite")
        values[name] = v
    missing = [d.name for d in declared if d.name not in values]
    if missing:
        raise ValueError(f"missing metrics: {', '.join(missing)}")
    bad = [d.name for d in declared if d.positive and values[d.name] <= 0]
    if bad:
        raise ValueError(f"metrics declared positive are not: {', '.join(bad)}")
    return values


def _last_line(text: str) -> str:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("no metrics line")
    return lines[-1]


def _run(cmd: str, env: dict[str, str], cwd: str | None, timeout: float):
    """Run ``cmd`` in its own process group; returns (code | None on timeout, out, err)."""
    try:
        proc = subprocess.Popen(
            cmd,
            shell=True,
            env=env,
            cwd=cwd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            start_new_session=True,
        )
    except OSError as exc:
        return -1, "", f"cannot start command: {exc}"
    try:
        out, err = proc.communicate(timeout=timeout)
        return proc.returncode, out, err
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        return None, out, err


def _run_process_once(
    target: ProcessTarget, space: ParameterSpace, setting: Sequence[float], log_name: str
) -> TestOutcome:
    native = space.decode(setting)
    start = time.monotonic()
    env = dict(os.environ)
    config_path = target.config_file
    if target.render == "env":
        env.update({f"CONF_{k}": render_value(v) for k, v in native.items()})
    else:
        path = Path(target.workdir or ".") / target.config_file
        try:
            path.write_text(render_lines(native))
        except OSError:
            return _failed("setup_error", time.monotonic() - start)
        config_path = str(path)
    subs = {k: shlex.quote(render_value(v)) for k, v in native.items()}
    subs["config_file"] = shlex.quote(config_path or "")
    log: list[str] = []

    def fmt(cmd: str) -> str:
        return PLACEHOLDER_RE.sub(lambda m: subs.get(m.group(1), m.group(0)), cmd)

    outcome: TestOutcome | None = None
    try:
        if target.setup_command:
            code, out, err = _run(fmt(target.setup_command), env, target.workdir, target.timeout)
            log += ["$ setup", out, err]
            if code != 0:
                outcome = _failed("setup_error", time.monotonic() - start)
        if outcome is None:
            code, out, err = _run(fmt(target.test_command), env, target.workdir, target.timeout)
            log += ["$ test", out, err]
            if code is None:
                outcome = _failed("timeout", time.monotonic() - start)
            elif code != 0:
                outcome = _failed("nonzero_exit", time.monotonic() - start)
            else:
                try:
                    if target.metrics_source == "stdout":
                        text = out
                    else:
                        text = (Path(target.workdir or ".") / target.results_file).read_text()
                    metrics = parse_metrics(_last_line(text), target.declared_metrics)
                    outcome = TestOutcome("ok", metrics, time.monotonic() - start)
                except (OSError, ValueError) as exc:
                    log.append(f"parse error: {exc}")
                    outcome = _failed("parse_error", time.monotonic() - start)
    finally:
        if target.teardown_command:
            code, out, err = _run(
                fmt(target.teardown_command), env, target.workdir, target.timeout
            )
            log += ["$ teardown", out, err]
            if code != 0 and outcome is not None and outcome.ok:
                # a dirty environment must not pass as a clean ok test
                outcome = _failed("setup_error", time.monotonic() - start)

    ref = None
    if target.log_dir:
        ref = str(Path(target.log_dir) / f"{log_name}.log")
        Path(target.log_dir).mkdir(parents=True, exist_ok=True)
        Path(ref).write_text("\n".join(log))
    return TestOutcome(outcome.status, outcome.metrics, time.monotonic() - start, outcome.reason, ref)


def _average(outcomes: list[TestOutcome]) -> TestOutcome:
    duration = sum(o.duration for o in outcomes)
    for o in outcomes:
        if not o.ok:
            return TestOutcome("failed", {}, duration, o.reason, o.log)
    names = outcomes[0].metrics.keys()
    metrics = {k: math.fsum(o.metrics[k] for o in outcomes) / len(outcomes) for k in names}
    return TestOutcome("ok", metrics, duration, None, outcomes[-1].log)


def eval_landscape(landscape_id: str, point: Sequence[float]) -> dict[str, float]:
    """Noise-free metrics of a synthetic landscape at ``point``."""
    land = get_landscape(landscape_id)
    return {land.metrics()[0]: land(point)}


def run_test(
    target: Target,
    space: ParameterSpace,
    setting: Sequence[float],
    rng: np.random.Generator | None = None,
    log_name: str = "test",
) -> TestOutcome:
    """Apply ``setting`` to ``target``, run one test and collect its metrics.

    ``rng`` drives synthetic measurement noise; pass a generator derived from
    the run seed and test index to make noisy runs replayable.
    """
    if target.kind == "synthetic":
        start = time.monotonic()
        land = target.landscape
        base = land(setting)
        if target.noise > 0:
            if rng is None:
                raise TargetError("noisy synthetic targets need an rng")
            draws = rng.standard_normal(target.repetitions)
            value = float(np.mean(base * (1.0 + target.noise * draws)))
        else:
            value = base
        return TestOutcome("ok", {land.metrics()[0]: value}, time.monotonic() - start)

    runs = [
        _run_process_once(target, space, setting, f"{log_name}-r{i}" if i else log_name)
        for i in range(target.repetitions)
    ]
    return _average(runs)


def target_from_dict(doc: Mapping[str, Any], base_dir: str | Path = ".") -> Target:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind == "synthetic":
        if "landscape" not in doc:
            raise TargetError("synthetic target needs 'landscape'")
        target = SyntheticTarget(
            doc.pop("landscape"), float(doc.pop("noise", 0.0)), int(doc.pop("repetitions", 1))
        )
        if doc:
            raise TargetError(f"unknown synthetic target fields: {sorted(doc)}")
        return target
    if kind == "process":
        decls = doc.pop("metrics_declared", None)
        if not isinstance(decls, list) or not decls:
            raise TargetError("process target needs a non-empty 'metrics_declared' list")
        metrics = tuple(
            MetricDecl(d["name"], bool(d.get("positive", False)))
            if isinstance(d, dict)
            else MetricDecl(str(d))
            for d in decls
        )
        if "test" not in doc:
            raise TargetError("process target needs a 'test' command")
        fields = dict(
            test_command=doc.pop("test"),
            declared_metrics=metrics,
            setup_command=doc.pop("setup", None),
            teardown_command=doc.pop("teardown", None),
            render=doc.pop("render", "env"),
            config_file=doc.pop("config_file", None),
            metrics_source=doc.pop("metrics", "stdout"),
            results_file=doc.pop("results_file", None),
            timeout=float(doc.pop("timeout", 600.0)),
            repetitions=int(doc.pop("repetitions", 1)),
            workdir=doc.pop("workdir", None) or str(base_dir),
            log_dir=doc.pop("log_dir", None),
        )
        if doc:
            raise TargetError(f"unknown process target fields: {sorted(doc)}")
        return ProcessTarget(**fields)
    raise TargetError(f"target kind must be 'synthetic' or 'process', got {kind!r}")

