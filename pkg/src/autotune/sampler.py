"""Configuration samplers.

All samplers share one call shape, ``sampler(space, k, state, bounds=None)``,
and return a :class:`SampleBatch`. When ``bounds`` is given the sampler divides
that box instead of the whole encoded space.

``dds_sample`` is divide-and-diverge sampling: each parameter range is cut into
``k`` intervals, one random permutation of interval indices is drawn per
parameter, and the permutations are aligned row-wise into ``k`` cells, so
every interval of every parameter is represented exactly once. The state
remembers visited cells of its base division and later calls steer away from
them. ``lhs_sample`` draws the same kind of batch without memory; ``grid_sample``
and ``uniform_sample`` are the usual baselines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .space import Bounds, ConfigSetting, ParameterSpace, divide_range, even_edges

Cell = tuple[int, ...]

REPAIR_PASSES = 64
# per colliding row, candidate swaps examined in one repair pass
MAX_SWAP_CANDIDATES = 256
DEFAULT_MAX_BATCH = 10_000


class SamplerError(ValueError):
    pass


@dataclass
class SamplerState:
    """Memory of one sampling scope (the whole space, or one bounded box).

    ``base_k`` is fixed by the first DDS call and ``visited`` holds cells of
    that base division. ``rng`` is the only source of randomness for every
    sampler call made with this state.
    """

    rng: np.random.Generator
    base_k: int | None = None
    visited: set[Cell] = field(default_factory=set)

    @classmethod
    def seeded(cls, seed: int | Sequence[int]) -> SamplerState:
        return cls(np.random.default_rng(seed))


@dataclass(frozen=True)
class SampleBatch:
    settings: list[ConfigSetting]
    cells: list[Cell]
    origin: str

    def __post_init__(self) -> None:
        if len(self.settings) != len(self.cells):
            raise ValueError("settings and cells must have equal length")

    def __len__(self) -> int:
        return len(self.settings)

    def truncated(self, size: int) -> SampleBatch:
        return SampleBatch(self.settings[:size], self.cells[:size], self.origin)


def sampling_edges(
    space: ParameterSpace, k: int, bounds: Bounds | None = None
) -> list[np.ndarray]:
    """Interval edges (``k + 1`` per dimension) used by the samplers.

    Over the whole space a discrete parameter is split on whole units when it
    has at least ``k`` values. Beyond that, and inside any bounded box, the
    encoded range is split evenly as a continuous range: a boolean divided into
    100 intervals maps 50 of them to false and 50 to true.
    """
    if k < 1:
        raise SamplerError(f"k must be >= 1, got {k}")
    edges = []
    for i, p in enumerate(space.parameters):
        if bounds is not None:
            edges.append(np.array(even_edges(bounds.lows[i], bounds.highs[i], k)))
        elif p.cardinality is not None and k <= p.cardinality:
            ivs = divide_range(p, k, i)
            edges.append(np.array([iv.low for iv in ivs] + [ivs[-1].high]))
        else:
            edges.append(np.array(even_edges(p.low, p.high, k)))
    return edges


def locate(edges: Sequence[np.ndarray], points: np.ndarray) -> list[Cell]:
    """Interval-index tuple of each point against per-dimension edges."""
    idx = np.empty(points.shape, dtype=np.int64)
    for d, e in enumerate(edges):
        k = len(e) - 1
        idx[:, d] = np.clip(np.searchsorted(e, points[:, d], side="right") - 1, 0, k - 1)
    return [tuple(int(v) for v in row) for row in idx]


def _draw(edges: Sequence[np.ndarray], idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform point inside each row's cell, one coordinate at a time."""
    m, n = idx.shape
    u = rng.random((m, n))
    pts = np.empty((m, n))
    for d, e in enumerate(edges):
        lo = e[idx[:, d]]
        hi = e[idx[:, d] + 1]
        x = lo + (hi - lo) * u[:, d]
        # lo + width * u can round up to hi
        pts[:, d] = np.where(x < hi, x, np.nextafter(hi, lo))
    return pts


def _as_batch(points: np.ndarray, cells: list[Cell], origin: str) -> SampleBatch:
    settings = [tuple(float(v) for v in row) for row in points]
    return SampleBatch(settings, cells, origin)


def _permutations(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([rng.permutation(k) for _ in range(n)], axis=1)


def _repair(
    idx: np.ndarray,
    mapped: np.ndarray,
    visited: set[Cell],
    rng: np.random.Generator,
    passes: int = REPAIR_PASSES,
) -> None:
    """Swap interval indices between rows so rows avoid ``visited`` cells.

    Swapping entries of one column keeps every column a permutation, so the
    exactly-once property survives. Each colliding row takes the candidate
    swap with the best change in collision count (sideways moves allowed);
    after ``passes`` passes any remaining collisions are accepted.
    """
    k, n = idx.shape
    if k < 2 or not visited:
        return

    def hit(row: np.ndarray) -> int:
        return 1 if tuple(int(v) for v in row) in visited else 0

    all_moves = [(d, p) for d in range(n) for p in range(k)]
    for _ in range(passes):
        bad = [r for r in range(k) if hit(mapped[r])]
        if not bad:
            return
        rng.shuffle(bad)
        for r in bad:
            if not hit(mapped[r]):
                continue
            moves = [(d, p) for d, p in all_moves if p != r]
            if len(moves) > MAX_SWAP_CANDIDATES:
                pick = rng.choice(len(moves), MAX_SWAP_CANDIDATES, replace=False)
                moves = [moves[i] for i in pick]
            best_delta, best_moves = None, []
            for d, p in moves:
                before = 1 + hit(mapped[p])
                new_r = mapped[r].copy()
                new_p = mapped[p].copy()
                new_r[d], new_p[d] = mapped[p, d], mapped[r, d]
                delta = hit(new_r) + hit(new_p) - before
                if best_delta is None or delta < best_delta:
                    best_delta, best_moves = delta, [(d, p)]
                elif delta == best_delta:
                    best_moves.append((d, p))
            if best_delta is None or best_delta > 0:
                continue
            d, p = best_moves[int(rng.integers(len(best_moves)))]
            idx[[r, p], d] = idx[[p, r], d]
            mapped[[r, p], d] = mapped[[p, r], d]


def dds_sample(
    space: ParameterSpace,
    k: int,
    state: SamplerState,
    bounds: Bounds | None = None,
) -> SampleBatch:
    """Divide-and-diverge sampling of ``k`` settings.

    The first call on a state fixes its base division (``state.base_k``).
    Later calls with a different ``k`` still stratify over their own ``k``
    intervals but avoid and record cells of the base division.
    """
    edges = sampling_edges(space, k, bounds)
    if state.base_k is None:
        state.base_k = k
    base_edges = edges if state.base_k == k else sampling_edges(space, state.base_k, bounds)

    idx = _permutations(k, space.dimension, state.rng)
    if state.base_k == k:
        mapped = idx.copy()
    else:
        # a k-interval is attributed to the base interval holding its midpoint
        mids = [(e[:-1] + e[1:]) / 2 for e in edges]
        maps = [
            np.clip(np.searchsorted(be, m, side="right") - 1, 0, state.base_k - 1)
            for be, m in zip(base_edges, mids)
        ]
        mapped = np.stack([maps[d][idx[:, d]] for d in range(space.dimension)], axis=1)
    _repair(idx, mapped, state.visited, state.rng)

    points = _draw(edges, idx, state.rng)
    cells = locate(base_edges, points)
    state.visited.update(cells)
    return _as_batch(points, cells, "dds")


def lhs_sample(
    space: ParameterSpace,
    k: int,
    state: SamplerState,
    bounds: Bounds | None = None,
) -> SampleBatch:
    """Latin hypercube batch: the DDS layout without any cell memory."""
    edges = sampling_edges(space, k, bounds)
    idx = _permutations(k, space.dimension, state.rng)
    points = _draw(edges, idx, state.rng)
    return _as_batch(points, [tuple(int(v) for v in row) for row in idx], "lhs")


def grid_sample(
    space: ParameterSpace,
    k_per_dim: int,
    state: SamplerState,
    bounds: Bounds | None = None,
    max_batch: int = DEFAULT_MAX_BATCH,
) -> SampleBatch:
    """One uniform point in every cell of the full ``k_per_dim ** n`` grid."""
    n = space.dimension
    total = k_per_dim**n
    if total > max_batch:
        raise SamplerError(
            f"gridding {n} parameters with k={k_per_dim} needs {k_per_dim}^{n} = {total} "
            f"samples, above the batch ceiling of {max_batch}"
        )
    edges = sampling_edges(space, k_per_dim, bounds)
    idx = np.array(list(itertools.product(range(k_per_dim), repeat=n)), dtype=np.int64)
    points = _draw(edges, idx, state.rng)
    return _as_batch(points, [tuple(int(v) for v in row) for row in idx], "grid")


def uniform_sample(
    space: ParameterSpace,
    k: int,
    state: SamplerState,
    bounds: Bounds | None = None,
) -> SampleBatch:
    """``k`` independent uniform draws; cells are located afterwards."""
    if k < 1:
        raise SamplerError(f"k must be >= 1, got {k}")
    box = bounds or Bounds.whole(space)
    lo = np.array(box.lows)
    hi = np.array(box.highs)
    x = lo + (hi - lo) * state.rng.random((k, space.dimension))
    points = np.where(x < hi, x, np.nextafter(hi, lo))
    cells = locate(sampling_edges(space, state.base_k or k, bounds), points)
    return _as_batch(points, cells, "uniform")


def grid_points_per_dim(batch_size: int, dimension: int) -> int:
    """Largest ``k`` with ``k ** dimension <= batch_size`` (at least 1)."""
    k = max(1, int(round(batch_size ** (1.0 / dimension))))
    while k > 1 and k**dimension > batch_size:
        k -= 1
    while (k + 1) ** dimension <= batch_size:
        k += 1
    return k


Sampler = Callable[..., SampleBatch]

SAMPLERS: dict[str, Sampler] = {
    "dds": dds_sample,
    "lhs": lhs_sample,
    "uniform": uniform_sample,
    "grid": grid_sample,
}


def draw_batch(
    name: str,
    space: ParameterSpace,
    size: int,
    state: SamplerState,
    bounds: Bounds | None = None,
    max_batch: int = DEFAULT_MAX_BATCH,
) -> SampleBatch:
    """Ask sampler ``name`` for a batch meant to hold ``size`` settings.

    Gridding picks the largest per-dimension count whose grid fits ``size``,
    so its batch may be smaller than requested.
    """
    if name not in SAMPLERS:
        raise SamplerError(f"unknown sampler {name!r}; choose from {sorted(SAMPLERS)}")
    if name == "grid":
        k = grid_points_per_dim(size, space.dimension)
        return grid_sample(space, k, state, bounds, max_batch=max_batch)
    return SAMPLERS[name](space, size, state, bounds)
