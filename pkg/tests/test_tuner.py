import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from autotune.executor import MetricDecl, ProcessTarget, SyntheticTarget
from autotune.landscapes import get_landscape
from autotune.optimizer import RRSParams, find_best
from autotune.space import Bounds, Parameter, ParameterSpace
from autotune.tuner import (
    HistoryError,
    JobError,
    TuningAborted,
    TuningJob,
    load_job,
    read_history,
    resume,
    run_tuning,
    stable_lines,
)
from autotune.utility import Identity, parse_utility

FIXTURES = Path(__file__).parent / "fixtures"


def job(landscape="smooth_bowl", **kw):
    land = get_landscape(landscape)
    kw.setdefault("budget", 60)
    kw.setdefault("set_size", 20)
    return TuningJob(
        space=land.space(),
        target=SyntheticTarget(landscape, kw.pop("noise", 0.0)),
        utility=Identity("throughput"),
        **kw,
    )


def test_smooth_bowl_converges():
    result = run_tuning(job(seed=4))
    assert result.best.utility >= 98.0
    assert len(result.history) == 60
    assert [d.batch_size for d in result.decisions] == [20, 20, 20]


def test_budget_equal_to_set_size_is_one_round():
    result = run_tuning(job(budget=100, set_size=100))
    assert {r.round for r in result.history} == {1}
    assert len(result.history) == 100


def test_last_round_truncated_and_baseline_counted():
    result = run_tuning(job(budget=26, set_size=10, baseline=(0.1, 0.1)))
    sizes = [sum(r.round == k for r in result.history) for k in range(4)]
    assert sizes == [1, 10, 10, 5]
    assert result.history[0].scope == "baseline"


def test_baseline_is_dominated():
    # a baseline at the peak cannot be beaten; the reported best stays the baseline
    result = run_tuning(job(budget=20, set_size=5, baseline=(0.63, 0.37)))
    assert result.best.test_index == 0
    assert result.best.utility == 100.0


def test_scope_and_best_reporting_invariants():
    for seed in range(10):
        result = run_tuning(job("bumpy", budget=50, set_size=10, seed=seed, baseline=(0.5, 0.5)))
        for rec in result.history:
            if rec.scope == "bounded":
                assert Bounds.from_list(rec.bounds).contains(rec.encoded)
        assert result.best == find_best([r.to_sample() for r in result.history])
        assert [r.test_index for r in result.history] == list(range(len(result.history)))


@pytest.mark.parametrize("sampler", ["dds", "lhs", "uniform", "grid"])
@pytest.mark.parametrize("optimizer", ["rbs", "rrs"])
def test_every_combination_runs_within_budget(sampler, optimizer):
    result = run_tuning(job("bumpy", budget=45, set_size=10, sampler=sampler, optimizer=optimizer))
    assert len(result.history) <= 45
    assert result.best is not None


def test_history_golden(tmp_path):
    path = tmp_path / "h.jsonl"
    run_tuning(
        job(budget=7, set_size=3, seed=0, baseline=(0.5, 0.5), noise=0.01, history_path=path)
    )
    got = list(stable_lines(path))
    golden = (FIXTURES / "golden_history.jsonl").read_text().splitlines()
    header, golden_header = json.loads(got[0]), json.loads(golden[0])
    header.pop("version"), golden_header.pop("version")
    assert header == golden_header
    assert got[1:] == golden[1:]
    # the baseline is test 0; its noise comes from the (seed, 1, test_index) stream
    z = np.random.default_rng([0, 1, 0]).standard_normal(1)[0]
    clean = 100 - 50 * (0.13**2 + 0.13**2)
    assert json.loads(golden[1])["utility"] == pytest.approx(clean * (1 + 0.01 * z), rel=1e-12)


def test_history_record_fields(tmp_path):
    path = tmp_path / "h.jsonl"
    run_tuning(job(budget=4, set_size=2, baseline=(0.5, 0.5), history_path=path))
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["type"] == "header" and header["format"] == "autotune-history/1"
    assert set(header) == {"type", "format", "version", "schema_hash", "seed", "job"}
    rec = json.loads(lines[2])
    assert set(rec) == {
        "type", "test_index", "round", "scope", "cell", "encoded", "decoded", "metrics",
        "utility", "status", "reason", "bounds", "duration", "timestamp",
    }
    assert rec["scope"] == "whole" and rec["decoded"] == {"x0": rec["encoded"][0], "x1": rec["encoded"][1]}


@pytest.mark.parametrize("optimizer", ["rbs", "rrs"])
def test_resume_after_interruption_matches(tmp_path, optimizer):
    full = tmp_path / "full.jsonl"
    j = job("bumpy", budget=60, set_size=20, seed=3, noise=0.05, optimizer=optimizer)
    reference = run_tuning(replace(j, history_path=full))
    lines = full.read_text().splitlines()
    for cut in (1, 21, 30, 61):
        part = tmp_path / f"part{cut}.jsonl"
        part.write_text("\n".join(lines[:cut]) + "\n")
        resumed = resume(j, part)
        assert list(stable_lines(part)) == list(stable_lines(full))
        assert resumed.best == reference.best


def test_resume_with_spent_budget_stops_immediately(tmp_path):
    path = tmp_path / "h.jsonl"
    j = job(budget=20, set_size=10, history_path=path)
    first = run_tuning(j)
    before = path.read_text()
    again = resume(j, path)
    assert path.read_text() == before
    assert again.best == first.best


def test_resume_guards(tmp_path):
    path = tmp_path / "h.jsonl"
    j = job(budget=20, set_size=10, history_path=path)
    run_tuning(j)
    other = TuningJob(
        space=ParameterSpace((Parameter("x0", "float", 0, 2), Parameter("x1", "float", 0, 1))),
        target=SyntheticTarget("smooth_bowl"),
        utility=Identity("throughput"),
        budget=20,
        set_size=10,
    )
    with pytest.raises(HistoryError, match="schema hash"):
        resume(other, path)
    with pytest.raises(HistoryError, match="job settings"):
        resume(replace(j, seed=99), path)

    lines = path.read_text().splitlines()
    lines[5] = lines[5][:40]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(HistoryError, match=r"h.jsonl:6"):
        resume(j, path)

    lines = path.read_text().splitlines()
    del lines[5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(HistoryError, match="breaks the sequence"):
        read_history(path)


def test_tampered_history_is_detected(tmp_path):
    path = tmp_path / "h.jsonl"
    j = job(budget=20, set_size=10, history_path=path)
    run_tuning(j)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[3])
    rec["encoded"] = [0.5, 0.5]
    lines[3] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(HistoryError, match="does not match"):
        resume(j, path)


def test_unusable_target_aborts_after_flushing(tmp_path):
    path = tmp_path / "h.jsonl"
    j = TuningJob(
        space=ParameterSpace((Parameter("a", "int", 0, 10),)),
        target=ProcessTarget("exit 1", (MetricDecl("tps"),)),
        utility=Identity("tps"),
        budget=10,
        set_size=3,
        history_path=path,
    )
    with pytest.raises(TuningAborted, match="nonzero_exit"):
        run_tuning(j)
    _, records = read_history(path)
    assert len(records) == 3 and all(r.reason == "nonzero_exit" for r in records)


def test_utility_failure_marks_test_failed():
    j = TuningJob(
        space=ParameterSpace((Parameter("a", "int", 0, 10),)),
        target=ProcessTarget('echo "tps=$CONF_a lat=$((CONF_a % 2))"', (MetricDecl("tps"), MetricDecl("lat"))),
        utility=parse_utility("ratio(tps, lat)"),
        budget=10,
        set_size=10,
    )
    result = run_tuning(j)
    odd = [r for r in result.history if r.decoded["a"] % 2]
    even = [r for r in result.history if not r.decoded["a"] % 2]
    assert all(r.status == "ok" for r in odd)
    assert all(r.reason == "parse_error" for r in even)


@pytest.mark.parametrize(
    "kw, message",
    [
        (dict(set_size=30, budget=20), "exceeds the budget"),
        (dict(set_size=0), "set_size"),
        (dict(sampler="sobol"), "unknown sampler"),
        (dict(optimizer="anneal"), "unknown optimizer"),
        (dict(baseline=(1.5, 0.5)), "out of range"),
        (dict(goal="minimize", utility=parse_utility("weighted_sum(throughput=-1)")), "positive"),
        (dict(utility=Identity("latency")), "undeclared"),
    ],
)
def test_job_validation(kw, message):
    land = get_landscape("smooth_bowl")
    base = dict(
        space=land.space(), target=SyntheticTarget("smooth_bowl"),
        utility=Identity("throughput"), budget=20, set_size=10,
    )
    base.update(kw)
    with pytest.raises(JobError, match=message):
        TuningJob(**base)


def test_minimize_goal_runs():
    result = run_tuning(job(goal="minimize", budget=30, set_size=10))
    # the inverse is maximized, so the best sample has the lowest throughput seen
    worst = min(r.metrics["throughput"] for r in result.history)
    assert result.best.metrics["throughput"] == worst


def test_load_job(tmp_path):
    (tmp_path / "space.toml").write_text(
        '[[parameter]]\nname = "x0"\nkind = "float"\nmin = 0.0\nmax = 1.0\n'
        '[[parameter]]\nname = "x1"\nkind = "float"\nmin = 0.0\nmax = 1.0\n'
    )
    f = tmp_path / "job.toml"
    f.write_text(
        'space = "space.toml"\nbudget = 30\nset_size = 10\nseed = 5\noptimizer = "rrs"\n'
        'history = "out/h.jsonl"\n[target]\nkind = "synthetic"\nlandscape = "bumpy"\n'
        "[baseline]\nx0 = 0.25\nx1 = 0.75\n[rrs]\nq = 0.2\n"
    )
    j = load_job(f, budget=40)
    assert (j.budget, j.set_size, j.seed, j.optimizer) == (40, 10, 5, "rrs")
    assert j.baseline == (0.25, 0.75)
    assert j.rrs_params == RRSParams(q=0.2)
    assert j.history_path == tmp_path / "out" / "h.jsonl"
    run_tuning(j)
    assert (tmp_path / "out" / "h.jsonl").exists()


def test_load_job_defaults_and_errors(tmp_path):
    f = tmp_path / "job.toml"
    f.write_text('budget = 10\nset_size = 5\n[target]\nkind = "synthetic"\nlandscape = "step_slab"\n')
    j = load_job(f, default_seed=17)
    assert j.seed == 17 and j.sampler == "dds" and j.space.names == ["x0", "x1"]
    for text, message in [
        ("budget = \n", "job.toml"),
        ('budget = 10\nset_size = 5\ncolour = 1\n[target]\nkind = "synthetic"\nlandscape = "bumpy"\n', "colour"),
        ("budget = 10\nset_size = 5\n", r"\[target\]"),
        ('budget = "10"\nset_size = 5\n[target]\nkind = "synthetic"\nlandscape = "bumpy"\n', "integer"),
        ('budget = 10\nset_size = 5\n[target]\nkind = "synthetic"\nlandscape = "bumpy"\n[baseline]\nx0 = 2.0\nx1 = 0.1\n', "outside"),
    ]:
        f.write_text(text)
        with pytest.raises(JobError, match=message):
            load_job(f)
