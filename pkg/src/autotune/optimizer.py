"""Search-based performance optimizers driving the tuning loop.

Both optimizers consume tested samples and answer with a :class:`RoundDecision`
telling the tuner what to sample next: the whole space, a bounded box, or
nothing (budget spent).

``RBS`` (recursive bound-and-search) bounds a box around the best sample of a
round using the nearest sampled neighbours per dimension, samples inside it,
and restarts over the whole space when a round fails to improve.

``RRS`` (recursive random search) is the single-sample baseline: uniform
exploration until a sample ranks in the top ``q`` quantile, then a shrinking
box around the incumbent until the box is smaller than ``v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .space import Bounds, ConfigSetting, ParameterSpace


class OptimizerError(RuntimeError):
    pass


class NoUsableSample(OptimizerError):
    """Every sample of a round failed, so there is nothing to search around."""


class BudgetExceeded(OptimizerError):
    pass


@dataclass(frozen=True)
class Sample:
    setting: ConfigSetting
    metrics: dict[str, float]
    utility: float | None
    round: int
    test_index: int
    status: str = "ok"
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.status not in ("ok", "failed"):
            raise ValueError(f"unknown sample status {self.status!r}")
        if self.ok and (self.utility is None or not math.isfinite(self.utility)):
            raise ValueError("ok samples need a finite utility")
        if not self.ok and self.utility is not None:
            raise ValueError("failed samples carry no utility")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class Action(str, Enum):
    SAMPLE_WHOLE = "sample_whole"
    SAMPLE_BOUNDED = "sample_bounded"
    STOP = "stop"


@dataclass(frozen=True)
class RoundDecision:
    action: Action
    reason: str
    bounds: Bounds | None = None
    batch_size: int = 0

    @property
    def scope(self) -> str:
        return "bounded" if self.action is Action.SAMPLE_BOUNDED else "whole"


@dataclass
class OptimizerState:
    space: ParameterSpace
    budget_total: int
    set_size: int
    budget_used: int = 0
    rounds_completed: int = 0
    best_so_far: Sample | None = None
    given_baseline: Sample | None = None
    current_scope: str = "whole"
    # samples since the last whole-space round; the bound step looks only at these
    scope_samples: list[Sample] = field(default_factory=list)
    best_trajectory: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.set_size < 1:
            raise ValueError("set size must be >= 1")
        if self.budget_total < 0:
            raise ValueError("budget must be >= 0")

    @property
    def remaining(self) -> int:
        return self.budget_total - self.budget_used

    def charge(self, count: int) -> None:
        if count > self.remaining:
            raise BudgetExceeded(
                f"{count} tests requested with only {self.remaining} of "
                f"{self.budget_total} left"
            )
        self.budget_used += count

    def offer(self, sample: Sample) -> bool:
        """Track the best ok sample; True when ``sample`` strictly improves it."""
        if not sample.ok:
            return False
        if self.best_so_far is None or sample.utility > self.best_so_far.utility:
            self.best_so_far = sample
            return True
        return False


def find_best(samples: Sequence[Sample]) -> Sample:
    """Highest-utility ok sample; the earliest test wins ties."""
    ok = [s for s in samples if s.ok]
    if not ok:
        raise NoUsableSample("no successful test in the sample set")
    return min(ok, key=lambda s: (-s.utility, s.test_index))


def compute_bounds(
    all_samples: Sequence[Sample], best: Sample, space: ParameterSpace
) -> Bounds:
    """Box between ``best`` and its nearest sampled neighbours on each axis.

    On every dimension the low edge is the largest sampled coordinate below
    ``best``'s and the high edge the smallest one above it, falling back to the
    space's own range where no such neighbour exists.
    """
    coords = np.array([s.setting for s in all_samples if s.ok] + [best.setting], dtype=float)
    lows, highs = [], []
    for i, p in enumerate(space.parameters):
        b = best.setting[i]
        col = coords[:, i]
        below = col[col < b]
        above = col[col > b]
        lo = float(below.max()) if below.size else p.low
        hi = float(above.min()) if above.size else p.high
        lows.append(max(lo, p.low))
        highs.append(min(hi, p.high))
    return Bounds(tuple(lows), tuple(highs))


class Optimizer:
    """Shared bookkeeping: budget, best-so-far and the baseline sample."""

    name = "base"

    def __init__(self, space: ParameterSpace, budget_total: int, set_size: int):
        self.state = OptimizerState(space, budget_total, set_size)

    @property
    def best(self) -> Sample | None:
        return self.state.best_so_far

    def ingest_baseline(self, sample: Sample) -> None:
        self.state.charge(1)
        self.state.given_baseline = sample
        self.state.offer(sample)

    def _next(self, action: Action, reason: str, size: int, bounds: Bounds | None = None):
        st = self.state
        if st.remaining <= 0:
            return RoundDecision(Action.STOP, "budget_exhausted")
        st.current_scope = "bounded" if action is Action.SAMPLE_BOUNDED else "whole"
        # the last round is truncated to whatever budget is left
        return RoundDecision(action, reason, bounds, min(size, st.remaining))

    def first_decision(self) -> RoundDecision:
        raise NotImplementedError

    def step(self, batch: Sequence[Sample]) -> RoundDecision:
        raise NotImplementedError


def rbs_step(state: OptimizerState, new_batch: Sequence[Sample]) -> RoundDecision:
    """Ingest one tested batch and pick the next round.

    An improving batch is followed by sampling inside the bounds around the new
    best, computed over every sample since the last whole-space round. A batch
    that does not strictly beat the previous best triggers a restart over the
    whole space. The run stops once the budget is spent.
    """
    state.charge(len(new_batch))
    improved = False
    for s in new_batch:
        improved = state.offer(s) or improved
    state.rounds_completed += 1
    state.best_trajectory.append(
        state.best_so_far.utility if state.best_so_far is not None else float("nan")
    )

    if improved:
        state.scope_samples.extend(s for s in new_batch if s.ok)
        bounds = compute_bounds(state.scope_samples, state.best_so_far, state.space)
        action, reason = Action.SAMPLE_BOUNDED, "improved"
    else:
        state.scope_samples.clear()
        bounds, action, reason = None, Action.SAMPLE_WHOLE, "no_improvement_restart"

    if state.remaining <= 0:
        return RoundDecision(Action.STOP, "budget_exhausted")
    state.current_scope = "bounded" if bounds is not None else "whole"
    return RoundDecision(action, reason, bounds, min(state.set_size, state.remaining))


class RBS(Optimizer):
    name = "rbs"

    def first_decision(self) -> RoundDecision:
        return self._next(Action.SAMPLE_WHOLE, "initial", self.state.set_size)

    def step(self, batch: Sequence[Sample]) -> RoundDecision:
        return rbs_step(self.state, batch)


@dataclass(frozen=True)
class RRSParams:
    """Recursive random search knobs.

    q: exploration quantile that promotes a sample to an exploitation centre;
       the first exploration batch holds ``ceil(1/q)`` samples and the
       exploitation box starts with volume fraction ``q``.
    c: box volume factor applied after each non-improving exploitation sample.
    v: volume fraction below which exploitation gives up and exploration resumes.
    """

    q: float = 0.1
    c: float = 0.5
    v: float = 0.001

    def __post_init__(self) -> None:
        if not 0 < self.q <= 1:
            raise ValueError("q must be in (0, 1]")
        if not 0 < self.c < 1:
            raise ValueError("c must be in (0, 1)")
        if not 0 < self.v < 1:
            raise ValueError("v must be in (0, 1)")

    @property
    def initial_explorations(self) -> int:
        return math.ceil(1 / self.q - 1e-9)


@dataclass
class RRSState:
    params: RRSParams
    phase: str = "explore"
    explored: list[float] = field(default_factory=list)
    explore_pool: list[Sample] = field(default_factory=list)
    centre: Sample | None = None
    volume: float = 1.0


def _promote(rrs: RRSState, centre: Sample) -> None:
    rrs.phase = "exploit"
    rrs.centre = centre
    rrs.volume = rrs.params.q


def rrs_step(state: OptimizerState, rrs: RRSState, new_sample: Sample) -> RoundDecision:
    """Ingest a single sample and return the next single-sample request."""
    state.charge(1)
    state.offer(new_sample)
    p = rrs.params

    if rrs.phase == "explore":
        if new_sample.ok:
            rrs.explored.append(new_sample.utility)
            rrs.explore_pool.append(new_sample)
        m = len(rrs.explored)
        m0 = p.initial_explorations
        if m == m0 and new_sample.ok:
            # end of the first exploration batch: seed from its best sample
            _promote(rrs, find_best(rrs.explore_pool))
        elif m > m0 and new_sample.ok:
            ranked = sorted(rrs.explored, reverse=True)
            cutoff = ranked[max(1, math.ceil(p.q * m)) - 1]
            if new_sample.utility >= cutoff:
                _promote(rrs, new_sample)
    else:
        if new_sample.ok and new_sample.utility > rrs.centre.utility:
            rrs.centre = new_sample
        else:
            rrs.volume *= p.c
            if rrs.volume < p.v:
                rrs.phase = "explore"
                rrs.centre = None

    if state.remaining <= 0:
        return RoundDecision(Action.STOP, "budget_exhausted")
    if rrs.phase == "explore":
        state.current_scope = "whole"
        return RoundDecision(Action.SAMPLE_WHOLE, "explore", None, 1)
    state.current_scope = "bounded"
    return RoundDecision(Action.SAMPLE_BOUNDED, "exploit", rrs_box(state.space, rrs), 1)


def rrs_box(space: ParameterSpace, rrs: RRSState) -> Bounds:
    """Box of volume fraction ``rrs.volume`` centred on the incumbent, clipped."""
    side = rrs.volume ** (1.0 / space.dimension)
    lows, highs = [], []
    for p, x in zip(space.parameters, rrs.centre.setting):
        half = side * (p.high - p.low) / 2
        lows.append(max(p.low, x - half))
        highs.append(min(p.high, x + half))
    return Bounds(tuple(lows), tuple(highs))


class RRS(Optimizer):
    name = "rrs"

    def __init__(
        self,
        space: ParameterSpace,
        budget_total: int,
        set_size: int,
        params: RRSParams | None = None,
    ):
        super().__init__(space, budget_total, set_size)
        self.rrs = RRSState(params or RRSParams())

    def first_decision(self) -> RoundDecision:
        return self._next(Action.SAMPLE_WHOLE, "initial", self.rrs.params.initial_explorations)

    def step(self, batch: Sequence[Sample]) -> RoundDecision:
        if not batch:
            raise OptimizerError("empty batch")
        decision = None
        for s in batch:
            decision = rrs_step(self.state, self.rrs, s)
        self.state.rounds_completed += 1
        b = self.state.best_so_far
        self.state.best_trajectory.append(b.utility if b is not None else float("nan"))
        if (
            decision.action is Action.SAMPLE_WHOLE
            and len(self.rrs.explored) < self.rrs.params.initial_explorations
        ):
            # failed tests left the first exploration batch short; top it up
            need = self.rrs.params.initial_explorations - len(self.rrs.explored)
            return RoundDecision(
                Action.SAMPLE_WHOLE, "initial", None, min(need, self.state.remaining)
            )
        return decision


def make_optimizer(
    name: str,
    space: ParameterSpace,
    budget_total: int,
    set_size: int,
    rrs_params: RRSParams | None = None,
) -> Optimizer:
    if name == "rbs":
        return RBS(space, budget_total, set_size)
    if name == "rrs":
        return RRS(space, budget_total, set_size, rrs_params)
    raise OptimizerError(f"unknown optimizer {name!r}; choose 'rbs' or 'rrs'")
