from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from autotune.space import Parameter, ParameterSpace

CATEGORY_POOL = ("a", "b", "c", "d", "e", "f", "g")


def random_space(rng: np.random.Generator, n: int) -> ParameterSpace:
    """A space of ``n`` parameters with randomly chosen kinds and ranges."""
    params = []
    for i in range(n):
        kind = ("float", "int", "bool", "categorical")[int(rng.integers(4))]
        if kind == "float":
            lo = float(rng.uniform(-100, 100))
            params.append(Parameter(f"p{i}", kind, lo, lo + float(rng.uniform(0.01, 500))))
        elif kind == "int":
            lo = int(rng.integers(-50, 50))
            params.append(Parameter(f"p{i}", kind, lo, lo + int(rng.integers(1, 300))))
        elif kind == "bool":
            params.append(Parameter(f"p{i}", kind))
        else:
            c = int(rng.integers(1, len(CATEGORY_POOL) + 1))
            params.append(Parameter(f"p{i}", kind, categories=CATEGORY_POOL[:c]))
    return ParameterSpace(tuple(params))


@st.composite
def parameters(draw, name: str = "p") -> Parameter:
    kind = draw(st.sampled_from(["float", "int", "bool", "categorical"]))
    if kind == "float":
        lo = draw(st.floats(-1e6, 1e6, allow_nan=False))
        width = draw(st.floats(1e-3, 1e6, allow_nan=False))
        return Parameter(name, kind, lo, lo + width)
    if kind == "int":
        lo = draw(st.integers(-10_000, 10_000))
        return Parameter(name, kind, lo, lo + draw(st.integers(1, 10_000)))
    if kind == "bool":
        return Parameter(name, kind)
    c = draw(st.integers(1, len(CATEGORY_POOL)))
    return Parameter(name, kind, categories=CATEGORY_POOL[:c])


@st.composite
def spaces(draw, max_dim: int = 13) -> ParameterSpace:
    n = draw(st.integers(1, max_dim))
    return ParameterSpace(tuple(draw(parameters(f"p{i}")) for i in range(n)))


def interval_index(p: Parameter, k: int, x: float, box=None) -> int:
    """Independent oracle: which of the k intervals holds x."""
    lo, hi = (p.low, p.high) if box is None else box
    card = p.cardinality
    if box is None and card is not None and k <= card:
        base, extra = divmod(card, k)
        edge = p.low
        for i in range(k):
            edge += base + (1 if i < extra else 0)
            if x < edge:
                return i
        raise AssertionError("value beyond the last interval")
    i = int((x - lo) / (hi - lo) * k)
    # guard against the division landing on a neighbouring edge
    while i > 0 and x < lo + (hi - lo) * i / k:
        i -= 1
    while i < k - 1 and x >= lo + (hi - lo) * (i + 1) / k:
        i += 1
    return i


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
