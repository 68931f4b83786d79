"""Closed-form synthetic performance surfaces on the unit box ``[0, 1)^d``.

Three archetypes stand in for real systems:

``step_slab``
    Flat base value ``b`` except inside a slab along one axis, where the value
    is ``12 * b``. One parameter crossing a threshold dominates everything.
``bumpy``
    A gentle linear trend plus five Gaussian bumps at fixed centres. The
    tallest bump is also the narrowest.
``smooth_bowl``
    A concave quadratic with a single interior maximum.

Variants take suffix arguments, e.g. ``step_slab:d=3,fraction=0.25`` or
``bumpy:d=13``. The constants below are part of the landscape definitions;
changing them changes every oracle value derived from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from .space import Parameter, ParameterSpace

METRIC = "throughput"

SLAB_RATIO = 12.0
SLAB_FRACTION = 1.0 / 8.0
SLAB_OFFSET = 0.55
SLAB_BASE = 100.0

BUMPY_BASE = 100.0
BUMPY_TREND = 20.0
# (centre, height, width); the last bump is the global peak
BUMPS: tuple[tuple[tuple[float, float], float, float], ...] = (
    ((0.20, 0.30), 40.0, 0.12),
    ((0.75, 0.20), 55.0, 0.08),
    ((0.30, 0.80), 50.0, 0.10),
    ((0.60, 0.58), 35.0, 0.15),
    ((0.85, 0.83), 80.0, 0.03),
)

BOWL_PEAK = 100.0
BOWL_CENTRE = (0.63, 0.37)


class LandscapeError(ValueError):
    pass


@dataclass(frozen=True)
class Landscape:
    """Base for synthetic landscapes; subclasses implement ``_f``."""

    dimension: int = 2
    id: str = field(default="", init=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise LandscapeError("landscape dimension must be >= 1")

    def metrics(self) -> tuple[str, ...]:
        return (METRIC,)

    def space(self) -> ParameterSpace:
        return ParameterSpace(
            tuple(Parameter(f"x{i}", "float", 0.0, 1.0) for i in range(self.dimension))
        )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vectorised evaluation of an ``(m, d)`` array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            raise LandscapeError(
                f"{self.id} expects {self.dimension}-D points, got {pts.shape[1]}-D"
            )
        return self._f(pts)

    def __call__(self, point) -> float:
        return float(self.evaluate(np.asarray(point, dtype=float)[None, :])[0])

    def _f(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def analytic_max(self) -> tuple[tuple[float, ...], float] | None:
        return None


@dataclass(frozen=True)
class StepSlab(Landscape):
    base: float = SLAB_BASE
    fraction: float = SLAB_FRACTION
    offset: float = SLAB_OFFSET
    axis: int = 0

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "id", "step_slab")
        if not (0 < self.fraction and self.offset >= 0 and self.offset + self.fraction <= 1):
            raise LandscapeError("slab must lie inside [0, 1)")
        if not 0 <= self.axis < self.dimension:
            raise LandscapeError("slab axis out of range")
        if self.base <= 0:
            raise LandscapeError("slab base value must be positive")

    def inside(self, pts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(pts)[:, self.axis]
        return (x >= self.offset) & (x < self.offset + self.fraction)

    def _f(self, pts: np.ndarray) -> np.ndarray:
        return np.where(self.inside(pts), SLAB_RATIO * self.base, self.base)

    @property
    def analytic_max(self):
        point = [0.5] * self.dimension
        point[self.axis] = self.offset + self.fraction / 2
        return tuple(point), SLAB_RATIO * self.base


@dataclass(frozen=True)
class Bumpy(Landscape):
    """Two-axis bump field; extra dimensions (``d > 2``) do not affect the value."""

    axes: tuple[int, int] = (0, 1)

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "id", "bumpy")
        if self.dimension < 2:
            raise LandscapeError("bumpy needs at least 2 dimensions")
        if len(set(self.axes)) != 2 or not all(0 <= a < self.dimension for a in self.axes):
            raise LandscapeError("bumpy needs two distinct axes inside the dimension")

    def _f(self, pts: np.ndarray) -> np.ndarray:
        xy = pts[:, list(self.axes)]
        out = BUMPY_BASE + BUMPY_TREND * xy.mean(axis=1)
        for centre, height, width in BUMPS:
            r2 = ((xy - np.asarray(centre)) ** 2).sum(axis=1)
            out = out + height * np.exp(-r2 / (2 * width * width))
        return out


@dataclass(frozen=True)
class SmoothBowl(Landscape):
    peak: float = BOWL_PEAK
    # per-unit-distance drop, scaled so the 2-D bowl is peak - 50 * |x - m|^2
    curvature: float | None = None

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "id", "smooth_bowl")
        if self.curvature is None:
            object.__setattr__(self, "curvature", 100.0 / self.dimension)
        if self.curvature <= 0:
            raise LandscapeError("bowl curvature must be positive")

    @property
    def centre(self) -> tuple[float, ...]:
        return tuple(BOWL_CENTRE[i % 2] for i in range(self.dimension))

    def _f(self, pts: np.ndarray) -> np.ndarray:
        return self.peak - self.curvature * ((pts - np.asarray(self.centre)) ** 2).sum(axis=1)

    @property
    def analytic_max(self):
        return self.centre, float(self.peak)


_REGISTRY: dict[str, type[Landscape]] = {
    "step_slab": StepSlab,
    "bumpy": Bumpy,
    "smooth_bowl": SmoothBowl,
}

_ARG_TYPES: dict[str, Any] = {
    "d": int,
    "axis": int,
    "base": float,
    "fraction": float,
    "offset": float,
    "peak": float,
    "curvature": float,
}


def list_landscapes() -> list[str]:
    return list(_REGISTRY)


@lru_cache(maxsize=64)
def get_landscape(spec: str) -> Landscape:
    """Look up ``name`` or ``name:key=value,...`` (``d`` sets the dimension)."""
    name, _, args = spec.partition(":")
    cls = _REGISTRY.get(name.strip())
    if cls is None:
        raise LandscapeError(
            f"unknown landscape {name!r}; available: {', '.join(list_landscapes())}"
        )
    kwargs: dict[str, Any] = {}
    for item in filter(None, (a.strip() for a in args.split(","))):
        key, eq, raw = item.partition("=")
        key = key.strip()
        if not eq or key not in _ARG_TYPES:
            raise LandscapeError(f"bad landscape argument {item!r} in {spec!r}")
        try:
            value = _ARG_TYPES[key](raw.strip())
        except ValueError:
            raise LandscapeError(f"bad value for {key!r} in {spec!r}") from None
        kwargs["dimension" if key == "d" else key] = value
    try:
        return cls(**kwargs)
    except TypeError:
        raise LandscapeError(f"argument not accepted by {name}: {spec!r}") from None
