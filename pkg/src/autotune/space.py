"""Typed configuration-parameter domain and its uniform numeric encoding.

Every parameter is mapped onto a half-open numeric range:

* ``float``        -> ``[min, max)``
* ``int``          -> ``[min, max)`` decoded with ``floor``
* ``bool``         -> ``[0, 2)`` where ``[0, 1)`` is false and ``[1, 2)`` true
* ``categorical``  -> ``[0, c)`` where ``floor`` picks the label in declaration order

Samplers and optimizers only ever see encoded values; decoding happens at the
edge, right before a setting is rendered for the system under tune.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = ("float", "int", "bool", "categorical")

ConfigSetting = tuple[float, ...]

# dots and dashes allowed for names like ``mapreduce.job.reduces``
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")


class SpaceError(ValueError):
    """Malformed parameter or parameter-space definition."""


class DimensionMismatch(ValueError):
    """A setting has the wrong number of coordinates for its space."""


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not _NAME_RE.fullmatch(self.name):
            raise SpaceError(f"invalid parameter name {self.name!r}")
        if self.kind not in KINDS:
            raise SpaceError(f"parameter {self.name!r}: unknown kind {self.kind!r}")
        if self.kind in ("float", "int"):
            if self.lower is None or self.upper is None:
                raise SpaceError(f"parameter {self.name!r}: numeric kinds need min and max")
            if isinstance(self.lower, bool) or isinstance(self.upper, bool):
                raise SpaceError(f"parameter {self.name!r}: min/max must be numbers")
            object.__setattr__(self, "lower", float(self.lower))
            object.__setattr__(self, "upper", float(self.upper))
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise SpaceError(f"parameter {self.name!r}: bounds must be finite")
            if not self.lower < self.upper:
                raise SpaceError(
                    f"parameter {self.name!r}: min ({self.lower}) must be < max ({self.upper})"
                )
            if self.kind == "int" and not (
                float(self.lower).is_integer() and float(self.upper).is_integer()
            ):
                raise SpaceError(f"parameter {self.name!r}: int bounds must be integers")
        elif self.kind == "categorical":
            object.__setattr__(self, "categories", tuple(self.categories))
            if not self.categories:
                raise SpaceError(f"parameter {self.name!r}: categories must be non-empty")
            if len(set(self.categories)) != len(self.categories):
                raise SpaceError(f"parameter {self.name!r}: category labels must be unique")

    @property
    def low(self) -> float:
        """Inclusive lower end of the encoded range."""
        if self.kind in ("float", "int"):
            return float(self.lower)
        return 0.0

    @property
    def high(self) -> float:
        """Exclusive upper end of the encoded range."""
        if self.kind in ("float", "int"):
            return float(self.upper)
        if self.kind == "bool":
            return 2.0
        return float(len(self.categories))

    @property
    def cardinality(self) -> int | None:
        """Number of distinct native values, or None for continuous parameters."""
        if self.kind == "float":
            return None
        return int(self.high - self.low)

    def contains(self, encoded: float) -> bool:
        return self.low <= encoded < self.high

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind in ("float", "int"):
            d["min"] = self.lower
            d["max"] = self.upper
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        return d


@dataclass(frozen=True)
class Interval:
    param_index: int
    interval_index: int
    low: float
    high: float


@dataclass(frozen=True)
class Violation:
    name: str
    value: float
    low: float
    high: float

    def __str__(self) -> str:
        return f"{self.name}={self.value!r} outside [{self.low}, {self.high})"


@dataclass(frozen=True)
class ParameterSpace:
    parameters: tuple[Parameter, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        params = tuple(self.parameters)
        object.__setattr__(self, "parameters", params)
        if not params:
            raise SpaceError("a parameter space needs at least one parameter")
        names = [p.name for p in params]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SpaceError(f"duplicate parameter names: {', '.join(dupes)}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def dimension(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    @property
    def lows(self) -> tuple[float, ...]:
        return tuple(p.low for p in self.parameters)

    @property
    def highs(self) -> tuple[float, ...]:
        return tuple(p.high for p in self.parameters)

    def __len__(self) -> int:
        return len(self.parameters)

    def __iter__(self):
        return iter(self.parameters)

    def __getitem__(self, key: int | str) -> Parameter:
        if isinstance(key, str):
            return self.parameters[self._index[key]]
        return self.parameters[key]

    def index(self, name: str) -> int:
        return self._index[name]

    def schema_hash(self) -> str:
        """Stable digest of the space definition, used to guard resumed runs."""
        blob = json.dumps([p.to_dict() for p in self.parameters], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def decode(self, setting: Sequence[float]) -> dict[str, Any]:
        check_dimension(self, setting)
        return {p.name: decode(p, v) for p, v in zip(self.parameters, setting)}

    def encode(self, native: dict[str, Any]) -> ConfigSetting:
        missing = [n for n in self.names if n not in native]
        if missing:
            raise SpaceError(f"missing values for parameters: {', '.join(missing)}")
        extra = sorted(set(native) - set(self.names))
        if extra:
            raise SpaceError(f"unknown parameters: {', '.join(extra)}")
        return tuple(encode(p, native[p.name]) for p in self.parameters)

    def to_dict(self) -> dict[str, Any]:
        return {"parameter": [p.to_dict() for p in self.parameters]}


def divide_range(param: Parameter, k: int, param_index: int = 0) -> list[Interval]:
    """Split a parameter's encoded range into ``k`` ordered, disjoint intervals.

    Continuous ranges are split into equal widths. Discrete ranges are split on
    whole units as evenly as possible, with the remainder going to the leftmost
    intervals, so ``int [0, 10)`` with ``k=3`` gives sizes 4, 3, 3.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    card = param.cardinality
    if card is not None:
        if k > card:
            raise SpaceError(
                f"parameter {param.name!r} has only {card} distinct values; "
                f"cannot divide it into {k} intervals"
            )
        base, extra = divmod(card, k)
        edges = [param.low]
        for i in range(k):
            edges.append(edges[-1] + base + (1 if i < extra else 0))
    else:
        edges = list(even_edges(param.low, param.high, k))
    return [
        Interval(param_index, i, float(edges[i]), float(edges[i + 1])) for i in range(k)
    ]


def even_edges(low: float, high: float, k: int) -> list[float]:
    """``k + 1`` equally spaced edges with the end points pinned exactly."""
    width = high - low
    edges = [low + width * i / k for i in range(k + 1)]
    edges[0], edges[-1] = low, high
    return edges


def decode(param: Parameter, encoded: float) -> Any:
    if not param.contains(encoded):
        raise ValueError(
            f"parameter {param.name!r}: encoded value {encoded!r} outside "
            f"[{param.low}, {param.high})"
        )
    if param.kind == "float":
        return float(encoded)
    if param.kind == "int":
        return int(math.floor(encoded))
    if param.kind == "bool":
        return encoded >= 1.0
    return param.categories[int(math.floor(encoded))]


def encode(param: Parameter, value: Any) -> float:
    """Map a native value onto the lower edge of its encoded unit."""
    if param.kind == "bool":
        if not isinstance(value, bool):
            raise SpaceError(f"parameter {param.name!r}: expected a boolean, got {value!r}")
        return 1.0 if value else 0.0
    if param.kind == "categorical":
        try:
            return float(param.categories.index(value))
        except ValueError:
            raise SpaceError(
                f"parameter {param.name!r}: {value!r} is not one of {list(param.categories)}"
            ) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpaceError(f"parameter {param.name!r}: expected a number, got {value!r}")
    if param.kind == "int" and not float(value).is_integer():
        raise SpaceError(f"parameter {param.name!r}: expected an integer, got {value!r}")
    x = float(value)
    if not param.contains(x):
        raise SpaceError(
            f"parameter {param.name!r}: {value!r} outside [{param.low}, {param.high})"
        )
    return x


def check_dimension(space: ParameterSpace, setting: Sequence[float]) -> None:
    if len(setting) != space.dimension:
        raise DimensionMismatch(
            f"setting has {len(setting)} values but the space has {space.dimension} parameters"
        )


def validate(space: ParameterSpace, setting: Sequence[float]) -> list[Violation]:
    """Return the range violations of ``setting``; an empty list means valid.

    Raises DimensionMismatch when the coordinate count is wrong, which is a
    different kind of error than an out-of-range value.
    """
    check_dimension(space, setting)
    return [
        Violation(p.name, float(v), p.low, p.high)
        for p, v in zip(space.parameters, setting)
        if not (isinstance(v, (int, float)) and p.contains(float(v)))
    ]


def parameter_from_dict(d: dict[str, Any], where: str = "") -> Parameter:
    loc = f"{where}: " if where else ""
    if not isinstance(d, dict):
        raise SpaceError(f"{loc}parameter entry must be a table")
    name = d.get("name")
    if not isinstance(name, str):
        raise SpaceError(f"{loc}parameter is missing a string 'name'")
    kind = d.get("kind")
    allowed = {"name", "kind", "min", "max", "categories"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise SpaceError(f"{loc}parameter {name!r}: unknown fields {unknown}")
    try:
        if kind in ("float", "int"):
            return Parameter(name, kind, lower=d.get("min"), upper=d.get("max"))
        if kind == "categorical":
            cats = d.get("categories")
            if not isinstance(cats, list) or not all(isinstance(c, str) for c in cats):
                raise SpaceError(f"parameter {name!r}: categories must be a list of strings")
            return Parameter(name, kind, categories=tuple(cats))
        return Parameter(name, kind)
    except (ValueError, TypeError) as exc:
        raise SpaceError(f"{loc}{exc}") from None


def space_from_dict(doc: dict[str, Any], source: str = "<space>") -> ParameterSpace:
    entries = doc.get("parameter")
    if not isinstance(entries, list) or not entries:
        raise SpaceError(f"{source}: expected one or more [[parameter]] tables")
    params = [
        parameter_from_dict(e, f"{source}: parameter #{i + 1}") for i, e in enumerate(entries)
    ]
    try:
        return ParameterSpace(tuple(params))
    except SpaceError as exc:
        raise SpaceError(f"{source}: {exc}") from None


def load_space(path: str | Path) -> ParameterSpace:
    """Read a TOML parameter-space definition made of ``[[parameter]]`` tables."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        # the decoder message already carries "(at line L, column C)"
        raise SpaceError(f"{path}: {exc}") from None
    return space_from_dict(doc, str(path))


@dataclass(frozen=True)
class Bounds:
    """An axis-aligned box ``[low_i, high_i)`` in encoded space."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lows", tuple(float(v) for v in self.lows))
        object.__setattr__(self, "highs", tuple(float(v) for v in self.highs))
        if len(self.lows) != len(self.highs):
            raise ValueError("bounds need one (low, high) pair per dimension")
        for i, (lo, hi) in enumerate(zip(self.lows, self.highs)):
            if not lo < hi:
                raise ValueError(f"empty bounds on dimension {i}: ({lo}, {hi})")

    @classmethod
    def whole(cls, space: ParameterSpace) -> Bounds:
        return cls(space.lows, space.highs)

    @property
    def dimension(self) -> int:
        return len(self.lows)

    def contains(self, setting: Sequence[float]) -> bool:
        return all(lo <= v < hi for v, lo, hi in zip(setting, self.lows, self.highs))

    def volume(self) -> float:
        return math.prod(hi - lo for lo, hi in zip(self.lows, self.highs))

    def within(self, space: ParameterSpace) -> bool:
        return self.dimension == space.dimension and all(
            p.low <= lo and hi <= p.high
            for p, lo, hi in zip(space.parameters, self.lows, self.highs)
        )

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in zip(self.lows, self.highs)]

    @classmethod
    def from_list(cls, pairs: Sequence[Sequence[float]]) -> Bounds:
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
