import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autotune.sampler import (
    SamplerError,
    SamplerState,
    dds_sample,
    draw_batch,
    grid_points_per_dim,
    grid_sample,
    lhs_sample,
    uniform_sample,
)
from autotune.space import Bounds, Parameter, ParameterSpace, validate

from conftest import interval_index, random_space, spaces


def assert_stratified(space, batch, k, bounds=None):
    assert len(batch) == k
    for d, p in enumerate(space.parameters):
        box = None if bounds is None else (bounds.lows[d], bounds.highs[d])
        got = sorted(interval_index(p, k, s[d], box) for s in batch.settings)
        assert got == list(range(k)), f"dimension {d} not stratified"


def unit_space(n):
    return ParameterSpace(tuple(Parameter(f"x{i}", "float", 0.0, 1.0) for i in range(n)))


@settings(max_examples=60, deadline=None)
@given(spaces(), st.integers(1, 100), st.integers(0, 2**32 - 1))
def test_dds_and_lhs_represent_every_interval_once(space, k, seed):
    for sampler in (dds_sample, lhs_sample):
        state = SamplerState.seeded(seed)
        batch = sampler(space, k, state)
        assert_stratified(space, batch, k)
        assert all(validate(space, s) == [] for s in batch.settings)


def test_divergence_fills_the_three_by_three_grid():
    space = unit_space(2)
    for seed in range(100):
        state = SamplerState.seeded(seed)
        cells = []
        for _ in range(3):
            cells += dds_sample(space, 3, state).cells
        assert sorted(cells) == [(i, j) for i in range(3) for j in range(3)]


def test_divergence_keeps_permutations_when_memory_is_full():
    space = unit_space(2)
    state = SamplerState.seeded(5)
    for _ in range(5):
        batch = dds_sample(space, 3, state)
        assert_stratified(space, batch, 3)
    assert len(state.visited) == 9


def test_dds_memory_uses_base_division_for_other_k():
    space = unit_space(2)
    state = SamplerState.seeded(1)
    dds_sample(space, 4, state)
    assert state.base_k == 4
    batch = dds_sample(space, 2, state)
    assert_stratified(space, batch, 2)
    # cells are reported in the 4-way base division
    assert all(0 <= c < 4 for cell in batch.cells for c in cell)
    assert len(state.visited) <= 6


def test_dds_diverges_more_than_lhs():
    # fraction of new base cells in a second batch
    space = unit_space(3)
    fresh_dds, fresh_lhs = [], []
    for seed in range(30):
        st_d = SamplerState.seeded(seed)
        first = set(dds_sample(space, 6, st_d).cells)
        second = dds_sample(space, 6, st_d).cells
        fresh_dds.append(sum(c not in first for c in second))
        st_l = SamplerState.seeded(seed)
        first = set(lhs_sample(space, 6, st_l).cells)
        second = lhs_sample(space, 6, st_l).cells
        fresh_lhs.append(sum(c not in first for c in second))
    assert min(fresh_dds) == 6
    assert np.mean(fresh_dds) >= np.mean(fresh_lhs)


def test_bounded_sampling_stays_inside_and_stratifies():
    rng = np.random.default_rng(3)
    for _ in range(50):
        space = random_space(rng, int(rng.integers(1, 6)))
        lows, highs = [], []
        for p in space:
            a, b = sorted(rng.uniform(p.low, p.high, 2))
            lows.append(a)
            highs.append(b if b > a else np.nextafter(a, np.inf))
        box = Bounds(tuple(lows), tuple(highs))
        k = int(rng.integers(1, 30))
        for sampler in (dds_sample, lhs_sample, uniform_sample):
            batch = sampler(space, k, SamplerState.seeded(int(rng.integers(1 << 30))), box)
            assert all(box.contains(s) for s in batch.settings)
            if sampler is not uniform_sample:
                assert_stratified(space, batch, k, box)


def test_grid_covers_every_cell():
    space = unit_space(2)
    batch = grid_sample(space, 4, SamplerState.seeded(0))
    assert len(batch) == 16
    assert sorted(batch.cells) == [(i, j) for i in range(4) for j in range(4)]
    for s, c in zip(batch.settings, batch.cells):
        assert all(ci / 4 <= x < (ci + 1) / 4 for x, ci in zip(s, c))


def test_grid_explosion_is_reported():
    with pytest.raises(SamplerError, match=r"10\^13"):
        grid_sample(unit_space(13), 10, SamplerState.seeded(0))


@pytest.mark.parametrize(
    "size, dim, k", [(100, 2, 10), (10, 2, 3), (16, 2, 4), (5, 3, 1), (1000, 3, 10), (7, 1, 7)]
)
def test_grid_points_per_dim(size, dim, k):
    assert grid_points_per_dim(size, dim) == k


def test_uniform_within_space_and_seeded():
    space = unit_space(3)
    a = uniform_sample(space, 50, SamplerState.seeded(9))
    b = uniform_sample(space, 50, SamplerState.seeded(9))
    assert a.settings == b.settings
    assert all(0 <= x < 1 for s in a.settings for x in s)


def test_same_seed_same_batches():
    space = unit_space(4)
    s1, s2 = SamplerState.seeded(11), SamplerState.seeded(11)
    for _ in range(3):
        assert dds_sample(space, 7, s1).settings == dds_sample(space, 7, s2).settings


def test_draw_batch_dispatch():
    space = unit_space(2)
    assert len(draw_batch("grid", space, 10, SamplerState.seeded(0))) == 9
    assert len(draw_batch("dds", space, 10, SamplerState.seeded(0))) == 10
    with pytest.raises(SamplerError, match="unknown sampler"):
        draw_batch("sobol", space, 10, SamplerState.seeded(0))
    with pytest.raises(SamplerError):
        uniform_sample(space, 0, SamplerState.seeded(0))
