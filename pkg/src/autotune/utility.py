"""Scalar utility functions over measured metrics.

A utility is a small declarative expression. The textual grammar is a subset
of Python call syntax::

    throughput                              identity
    identity(throughput)                    identity
    ratio(throughput, latency)              throughput / latency
    weighted_sum(throughput=0.7, hits=0.3)  0.7*throughput + 0.3*hits
    gate(memory, throughput, cm=1024)       throughput * S(cm - memory - margin)
    gate(memory, throughput, cm=1024, margin=5)
    inverse(runtime)                        1 / runtime
    inverse(ratio(latency, throughput))     expressions nest under inverse

``S`` is the logistic sigmoid and ``margin`` defaults to 5. Custom
expressions can be added by registering a builder in :data:`BUILDERS`.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Union

MetricVector = Mapping[str, float]

DEFAULT_MARGIN = 5.0


class UtilityError(ValueError):
    pass


def sigmoid(x: float) -> float:
    # split on sign so exp never overflows
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _metric(metrics: MetricVector, name: str) -> float:
    try:
        return float(metrics[name])
    except KeyError:
        raise UtilityError(f"metric {name!r} missing from measured metrics") from None


@dataclass(frozen=True)
class Identity:
    metric: str

    def evaluate(self, metrics: MetricVector) -> float:
        return _metric(metrics, self.metric)

    def metrics(self) -> set[str]:
        return {self.metric}

    def __str__(self) -> str:
        return self.metric


@dataclass(frozen=True)
class Ratio:
    numerator: str
    denominator: str

    def evaluate(self, metrics: MetricVector) -> float:
        den = _metric(metrics, self.denominator)
        if den == 0:
            raise UtilityError(f"ratio denominator {self.denominator!r} is zero")
        return _metric(metrics, self.numerator) / den

    def metrics(self) -> set[str]:
        return {self.numerator, self.denominator}

    def __str__(self) -> str:
        return f"ratio({self.numerator}, {self.denominator})"


@dataclass(frozen=True)
class WeightedSum:
    terms: tuple[tuple[str, float], ...]

    def evaluate(self, metrics: MetricVector) -> float:
        return math.fsum(w * _metric(metrics, m) for m, w in self.terms)

    def metrics(self) -> set[str]:
        return {m for m, _ in self.terms}

    def __str__(self) -> str:
        return "weighted_sum(" + ", ".join(f"{m}={w!r}" for m, w in self.terms) + ")"


@dataclass(frozen=True)
class ThresholdGate:
    """``gated * S(threshold - metric - margin)``: a soft cap on ``metric``."""

    metric: str
    gated: str
    threshold: float
    margin: float = DEFAULT_MARGIN

    def evaluate(self, metrics: MetricVector) -> float:
        x = self.threshold - _metric(metrics, self.metric) - self.margin
        return _metric(metrics, self.gated) * sigmoid(x)

    def metrics(self) -> set[str]:
        return {self.metric, self.gated}

    def __str__(self) -> str:
        return (
            f"gate({self.metric}, {self.gated}, cm={self.threshold!r}, margin={self.margin!r})"
        )


@dataclass(frozen=True)
class Inverse:
    inner: "UtilitySpec"

    def evaluate(self, metrics: MetricVector) -> float:
        v = self.inner.evaluate(metrics)
        if v == 0:
            raise UtilityError(f"cannot invert {self.inner}: value is zero")
        return 1.0 / v

    def metrics(self) -> set[str]:
        return self.inner.metrics()

    def __str__(self) -> str:
        return f"inverse({self.inner})"


UtilitySpec = Union[Identity, Ratio, WeightedSum, ThresholdGate, Inverse]


def evaluate_utility(spec: UtilitySpec, metrics: MetricVector) -> float:
    value = spec.evaluate(metrics)
    if not math.isfinite(value):
        raise UtilityError(f"utility {spec} is not finite ({value!r})")
    return value


def is_positive(spec: UtilitySpec, positive: set[str]) -> bool:
    """Whether ``spec`` is provably > 0 given the metrics declared positive."""
    if isinstance(spec, Identity):
        return spec.metric in positive
    if isinstance(spec, Ratio):
        return spec.numerator in positive and spec.denominator in positive
    if isinstance(spec, WeightedSum):
        return all(m in positive and w > 0 for m, w in spec.terms)
    if isinstance(spec, ThresholdGate):
        return spec.gated in positive
    if isinstance(spec, Inverse):
        return is_positive(spec.inner, positive)
    return False


def orient_for_maximization(
    spec: UtilitySpec, goal: str, positive_metrics: set[str] | frozenset[str]
) -> UtilitySpec:
    """Turn a goal into something to maximize.

    Minimization takes the inverse, never the negation, so the expression must
    be strictly positive on every measurement.
    """
    if goal == "maximize":
        return spec
    if goal != "minimize":
        raise UtilityError(f"goal must be 'maximize' or 'minimize', got {goal!r}")
    if not is_positive(spec, set(positive_metrics)):
        raise UtilityError(
            f"cannot minimize {spec}: minimization inverts the utility, which needs "
            "metrics declared strictly positive (negation is not used)"
        )
    return Inverse(spec)


# --- parsing -----------------------------------------------------------------


def _name(node: ast.expr, what: str) -> str:
    if isinstance(node, ast.Name):
        return node.id
    raise UtilityError(f"{what} must be a metric name")


def _number(node: ast.expr, what: str) -> float:
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _number(node.operand, what)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        if isinstance(node.value, bool):
            raise UtilityError(f"{what} must be a number")
        return float(node.value)
    raise UtilityError(f"{what} must be a number")


def _build_identity(call: ast.Call) -> UtilitySpec:
    if len(call.args) != 1 or call.keywords:
        raise UtilityError("identity() takes exactly one metric")
    return Identity(_name(call.args[0], "identity argument"))


def _build_ratio(call: ast.Call) -> UtilitySpec:
    if len(call.args) != 2 or call.keywords:
        raise UtilityError("ratio() takes a numerator and a denominator metric")
    return Ratio(_name(call.args[0], "numerator"), _name(call.args[1], "denominator"))


def _build_weighted_sum(call: ast.Call) -> UtilitySpec:
    if call.args or not call.keywords:
        raise UtilityError("weighted_sum() takes metric=weight pairs")
    return WeightedSum(tuple((kw.arg, _number(kw.value, f"weight of {kw.arg}")) for kw in call.keywords))


def _build_gate(call: ast.Call) -> UtilitySpec:
    if len(call.args) != 2:
        raise UtilityError("gate() takes the capped metric, the gated metric, cm= and margin=")
    kws = {kw.arg: _number(kw.value, kw.arg) for kw in call.keywords}
    unknown = set(kws) - {"cm", "margin"}
    if unknown or "cm" not in kws:
        raise UtilityError("gate() needs cm= and accepts only cm= and margin=")
    return ThresholdGate(
        _name(call.args[0], "gate metric"),
        _name(call.args[1], "gated metric"),
        kws["cm"],
        kws.get("margin", DEFAULT_MARGIN),
    )


def _build_inverse(call: ast.Call) -> UtilitySpec:
    if len(call.args) != 1 or call.keywords:
        raise UtilityError("inverse() takes one expression")
    return Inverse(_to_spec(call.args[0]))


BUILDERS: dict[str, Callable[[ast.Call], UtilitySpec]] = {
    "identity": _build_identity,
    "ratio": _build_ratio,
    "weighted_sum": _build_weighted_sum,
    "gate": _build_gate,
    "inverse": _build_inverse,
}


def _to_spec(node: ast.expr) -> UtilitySpec:
    if isinstance(node, ast.Name):
        return Identity(node.id)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        builder = BUILDERS.get(node.func.id)
        if builder is None:
            raise UtilityError(
                f"unknown utility function {node.func.id!r}; known: {sorted(BUILDERS)}"
            )
        return builder(node)
    raise UtilityError(f"unsupported utility expression: {ast.unparse(node)!r}")


def parse_utility(text: str) -> UtilitySpec:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise UtilityError(f"cannot parse utility {text!r}: {exc.msg}") from None
    return _to_spec(tree.body)


def check_metrics(spec: UtilitySpec, declared: set[str] | frozenset[str]) -> None:
    missing = sorted(spec.metrics() - set(declared))
    if missing:
        raise UtilityError(
            f"utility {spec} references undeclared metrics: {', '.join(missing)}"
        )
