"""Oracles and experiment harness on synthetic landscapes.

* :func:`empirical_phi` estimates the measure of the part of a subspace whose
  performance does not exceed ``y0``, on a deterministic grid of cell centres.
* :func:`brute_force_optimum` is the reference optimum for tests: a grid
  argmax refined by a bounded local optimizer.
* :func:`compare_strategies` runs seeded trials of sampler/optimizer pairs and
  reports best-so-far trajectories as CSV plus median/IQR summaries.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy import optimize

from .executor import SyntheticTarget
from .landscapes import get_landscape
from .sampler import SAMPLERS
from .space import Bounds
from .tuner import HistoryRecord, TuningJob, run_tuning
from .utility import Identity

# largest number of grid points evaluated by an oracle
MAX_GRID_POINTS = 100_000_000
_CHUNK = 1_000_000

CSV_COLUMNS = ("sampler", "optimizer", "landscape", "seed", "round", "best_utility", "tests_used")
OPTIMIZERS = ("rbs", "rrs")


class DiagnosticsError(ValueError):
    pass


def _check_grid(dimension: int, resolution: int) -> None:
    if resolution < 2:
        raise DiagnosticsError("grid resolution must be >= 2 per dimension")
    if resolution**dimension > MAX_GRID_POINTS:
        raise DiagnosticsError(
            f"a {resolution}-per-dimension grid in {dimension}-D has "
            f"{resolution}**{dimension} points, above the {MAX_GRID_POINTS:.0e} limit"
        )


def _centres(resolution: int) -> np.ndarray:
    return (np.arange(resolution) + 0.5) / resolution


def _grid_chunks(axes: Sequence[np.ndarray]) -> Iterable[np.ndarray]:
    """Cartesian product of ``axes`` as ``(m, d)`` arrays of bounded size."""
    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes)) if sizes else 0
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        idx = np.unravel_index(flat, sizes)
        yield np.column_stack([a[i] for a, i in zip(axes, idx)])


@dataclass(frozen=True)
class PhiEstimate:
    subspace: Bounds
    y0: float
    grid_resolution: int
    phi: float
    denominator: str = "whole"
    points: int = 0


def empirical_phi(
    landscape_id: str,
    subspace: Bounds | None,
    y0: float,
    grid_resolution: int,
    denominator: str = "whole",
) -> PhiEstimate:
    """Fraction of grid cells in ``subspace`` where the landscape is at most ``y0``.

    The grid is the set of cell centres of a ``grid_resolution``-per-dimension
    division of the whole unit box; the subspace keeps the centres it
    contains. With ``denominator="whole"`` the count is divided by the number
    of cells of the whole space, so phi measures the qualifying volume
    relative to the whole space. ``denominator="subspace"`` divides by the
    cells inside the subspace instead.
    """
    land = get_landscape(landscape_id)
    d = land.dimension
    _check_grid(d, grid_resolution)
    if denominator not in ("whole", "subspace"):
        raise DiagnosticsError("denominator must be 'whole' or 'subspace'")
    if subspace is None:
        subspace = Bounds.whole(land.space())
    if subspace.dimension != d:
        raise DiagnosticsError(f"subspace is {subspace.dimension}-D, landscape is {d}-D")

    c = _centres(grid_resolution)
    axes = [c[(c >= lo) & (c < hi)] for lo, hi in zip(subspace.lows, subspace.highs)]
    inside = int(np.prod([len(a) for a in axes]))
    hits = sum(int(np.count_nonzero(land.evaluate(pts) <= y0)) for pts in _grid_chunks(axes))
    total = grid_resolution**d if denominator == "whole" else inside
    phi = hits / total if total else 0.0
    return PhiEstimate(subspace, float(y0), grid_resolution, phi, denominator, inside)


def brute_force_optimum(
    landscape_id: str, grid_resolution: int, polish: bool = True
) -> tuple[tuple[float, ...], float]:
    """Best grid cell centre, then a bounded L-BFGS-B refinement from it.

    The refinement only replaces the grid point when it is strictly better,
    so flat landscapes (``step_slab``) keep a grid point.
    """
    land = get_landscape(landscape_id)
    d = land.dimension
    _check_grid(d, grid_resolution)
    axes = [_centres(grid_resolution)] * d
    best_x, best_v = None, -np.inf
    for pts in _grid_chunks(axes):
        vals = land.evaluate(pts)
        i = int(np.argmax(vals))
        if vals[i] > best_v:
            best_x, best_v = pts[i].copy(), float(vals[i])
    if polish:
        res = optimize.minimize(
            lambda x: -land(x),
            best_x,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * d,
            options={"ftol": 1e-15, "gtol": 1e-12},
        )
        x = np.clip(res.x, 0.0, np.nextafter(1.0, 0.0))
        if land(x) > best_v:
            best_x, best_v = x, land(x)
    return tuple(float(v) for v in best_x), float(best_v)


# --- strategy comparison ------------------------------------------------------


def parse_strategy(text: str) -> tuple[str, str]:
    """``"dds+rbs"`` or ``"rrs+lhs"`` -> ``(sampler, optimizer)``."""
    parts = [p.strip().lower() for p in text.split("+")]
    samplers = [p for p in parts if p in SAMPLERS]
    optimizers = [p for p in parts if p in OPTIMIZERS]
    if len(parts) != 2 or len(samplers) != 1 or len(optimizers) != 1:
        raise DiagnosticsError(
            f"bad strategy {text!r}: expected <sampler>+<optimizer> with sampler in "
            f"{sorted(SAMPLERS)} and optimizer in {list(OPTIMIZERS)}"
        )
    return samplers[0], optimizers[0]


@dataclass(frozen=True)
class ComparisonConfig:
    strategies: tuple[tuple[str, str], ...]
    landscapes: tuple[str, ...]
    set_size: int
    rounds: int
    trials: int
    seed: int = 0
    noise: float = 0.0
    budget: int | None = None

    def __post_init__(self) -> None:
        for sampler, opt in self.strategies:
            if sampler not in SAMPLERS or opt not in OPTIMIZERS:
                raise DiagnosticsError(f"unknown strategy {sampler}+{opt}")
        for land in self.landscapes:
            get_landscape(land)
        if self.set_size < 1 or self.rounds < 1 or self.trials < 1:
            raise DiagnosticsError("set_size, rounds and trials must be >= 1")

    @property
    def total_budget(self) -> int:
        return self.budget if self.budget is not None else self.set_size * self.rounds


@dataclass(frozen=True)
class TrialRow:
    sampler: str
    optimizer: str
    landscape: str
    seed: int
    round: int
    best_utility: float
    tests_used: int


def checkpoint_trajectory(
    history: Sequence[HistoryRecord], set_size: int, rounds: int
) -> list[tuple[int, float, int]]:
    """Best utility after every ``set_size`` tests, for ``rounds`` checkpoints.

    Checkpoints line up with rounds for batch optimizers and give the
    single-sample optimizer an equal-budget view.
    """
    out = []
    best = -np.inf
    used = 0
    for r in range(1, rounds + 1):
        stop = min(r * set_size, len(history))
        for rec in history[used:stop]:
            if rec.utility is not None and rec.utility > best:
                best = rec.utility
        used = stop
        out.append((r, float(best), used))
    return out


@dataclass
class ComparisonReport:
    config: ComparisonConfig
    rows: list[TrialRow] = field(default_factory=list)

    def final(self, strategy: str | tuple[str, str], landscape: str) -> np.ndarray:
        """Final best utility per trial for one strategy on one landscape."""
        sampler, opt = parse_strategy(strategy) if isinstance(strategy, str) else strategy
        last = self.config.rounds
        return np.array(
            [
                r.best_utility
                for r in self.rows
                if (r.sampler, r.optimizer, r.landscape, r.round) == (sampler, opt, landscape, last)
            ]
        )

    def per_round(self, strategy: str | tuple[str, str], landscape: str) -> np.ndarray:
        """``(trials, rounds)`` array of best-so-far utilities."""
        sampler, opt = parse_strategy(strategy) if isinstance(strategy, str) else strategy
        sel = sorted(
            (r.seed, r.round, r.best_utility)
            for r in self.rows
            if (r.sampler, r.optimizer, r.landscape) == (sampler, opt, landscape)
        )
        return np.array([v for *_, v in sel]).reshape(-1, self.config.rounds)

    def summary(self) -> list[dict[str, float | int | str]]:
        """Median and interquartile range of best utility per strategy, landscape and round."""
        out = []
        keys = sorted({(r.sampler, r.optimizer, r.landscape, r.round) for r in self.rows})
        for sampler, opt, land, rnd in keys:
            vals = np.array(
                [
                    r.best_utility
                    for r in self.rows
                    if (r.sampler, r.optimizer, r.landscape, r.round) == (sampler, opt, land, rnd)
                ]
            )
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            out.append(
                {
                    "strategy": f"{sampler}+{opt}",
                    "landscape": land,
                    "round": rnd,
                    "trials": len(vals),
                    "median": float(med),
                    "q1": float(q1),
                    "q3": float(q3),
                    "iqr": float(q3 - q1),
                }
            )
        return out

    def write_csv(self, out: TextIO | str | Path) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as fh:
                self.write_csv(fh)
            return
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(
                [r.sampler, r.optimizer, r.landscape, r.seed, r.round, repr(r.best_utility), r.tests_used]
            )

    def write_summary_csv(self, out: TextIO | str | Path) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as fh:
                self.write_summary_csv(fh)
            return
        rows = self.summary()
        cols = ("strategy", "landscape", "round", "trials", "median", "q1", "q3", "iqr")
        w = csv.DictWriter(out, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def run_trial(
    sampler: str, optimizer: str, landscape: str, seed: int, set_size: int, budget: int,
    noise: float = 0.0,
) -> list[HistoryRecord]:
    land = get_landscape(landscape)
    job = TuningJob(
        space=land.space(),
        target=SyntheticTarget(landscape, noise),
        utility=Identity(land.metrics()[0]),
        budget=budget,
        set_size=min(set_size, budget),
        seed=seed,
        sampler=sampler,
        optimizer=optimizer,
    )
    return run_tuning(job).history


def compare_strategies(config: ComparisonConfig) -> ComparisonReport:
    """Seeded trials of every strategy on every landscape.

    Trial ``t`` uses seed ``config.seed + t`` for every strategy, so strategies
    are compared on common random numbers.
    """
    report = ComparisonReport(config)
    for (sampler, opt), land, t in itertools.product(
        config.strategies, config.landscapes, range(config.trials)
    ):
        seed = config.seed + t
        history = run_trial(sampler, opt, land, seed, config.set_size, config.total_budget, config.noise)
        for rnd, best, used in checkpoint_trajectory(history, config.set_size, config.rounds):
            report.rows.append(TrialRow(sampler, opt, land, seed, rnd, best, used))
    return report
