import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from autotune.space import (
    Bounds,
    DimensionMismatch,
    Parameter,
    ParameterSpace,
    SpaceError,
    decode,
    divide_range,
    encode,
    load_space,
    space_from_dict,
    validate,
)

from conftest import parameters, spaces


def _space():
    return ParameterSpace(
        (
            Parameter("threads", "int", 1, 65),
            Parameter("ratio", "float", 0.0, 0.5),
            Parameter("cache", "bool"),
            Parameter("mode", "categorical", categories=("safe", "fast", "eco")),
        )
    )


def test_encoded_ranges_per_kind():
    s = _space()
    assert s.lows == (1.0, 0.0, 0.0, 0.0)
    assert s.highs == (65.0, 0.5, 2.0, 3.0)


def test_boolean_halves():
    p = Parameter("b", "bool")
    assert decode(p, 0.0) is False
    assert decode(p, 0.999999) is False
    assert decode(p, 1.0) is True
    assert decode(p, 1.999) is True
    assert encode(p, True) == 1.0 and encode(p, False) == 0.0


def test_int_and_categorical_floor():
    assert decode(Parameter("i", "int", 0, 10), 3.99) == 3
    assert decode(Parameter("i", "int", -5, 5), -4.5) == -5
    cat = Parameter("c", "categorical", categories=("x", "y", "z"))
    assert [decode(cat, v) for v in (0.0, 1.5, 2.999)] == ["x", "y", "z"]


def test_upper_bound_is_exclusive():
    p = Parameter("f", "float", 0.0, 1.0)
    with pytest.raises(ValueError):
        decode(p, 1.0)
    assert decode(p, math.nextafter(1.0, 0.0)) < 1.0


def test_divide_range_discrete_remainder_goes_left():
    ivs = divide_range(Parameter("i", "int", 0, 10), 3)
    assert [(iv.low, iv.high) for iv in ivs] == [(0, 4), (4, 7), (7, 10)]


def test_divide_range_continuous_even():
    ivs = divide_range(Parameter("f", "float", 0.0, 1.0), 4)
    assert [(iv.low, iv.high) for iv in ivs] == [(0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]


def test_divide_range_bool_in_two():
    ivs = divide_range(Parameter("b", "bool"), 2)
    assert [(iv.low, iv.high) for iv in ivs] == [(0, 1), (1, 2)]


def test_divide_range_more_intervals_than_values():
    with pytest.raises(SpaceError, match="only 2 distinct values"):
        divide_range(Parameter("b", "bool"), 3)
    with pytest.raises(ValueError):
        divide_range(Parameter("f", "float", 0, 1), 0)


@given(parameters(), st.integers(1, 200))
def test_divide_range_partitions(param, k):
    card = param.cardinality
    if card is not None and k > card:
        with pytest.raises(SpaceError):
            divide_range(param, k)
        return
    ivs = divide_range(param, k)
    assert len(ivs) == k
    assert ivs[0].low == param.low and ivs[-1].high == param.high
    for a, b in zip(ivs, ivs[1:]):
        assert a.high == b.low
    assert all(iv.low < iv.high for iv in ivs)
    if card is not None:
        sizes = [iv.high - iv.low for iv in ivs]
        assert max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)


@given(spaces(), st.data())
def test_encode_decode_round_trip(space, data):
    native = {}
    for p in space:
        if p.kind == "float":
            native[p.name] = data.draw(
                st.floats(p.low, p.high, exclude_max=True, allow_nan=False)
            )
        elif p.kind == "int":
            native[p.name] = data.draw(st.integers(int(p.low), int(p.high) - 1))
        elif p.kind == "bool":
            native[p.name] = data.draw(st.booleans())
        else:
            native[p.name] = data.draw(st.sampled_from(p.categories))
    setting = space.encode(native)
    assert validate(space, setting) == []
    assert space.decode(setting) == native


def test_validate_reports_violations_and_dimension():
    s = _space()
    assert validate(s, (1.0, 0.0, 0.0, 0.0)) == []
    bad = validate(s, (65.0, 0.25, 2.0, 1.0))
    assert [v.name for v in bad] == ["threads", "cache"]
    with pytest.raises(DimensionMismatch):
        validate(s, (1.0, 0.0))


def test_encode_rejects_bad_native_values():
    s = _space()
    ok = {"threads": 8, "ratio": 0.1, "cache": True, "mode": "fast"}
    assert s.encode(ok) == (8.0, 0.1, 1.0, 1.0)
    with pytest.raises(SpaceError, match="not one of"):
        s.encode({**ok, "mode": "turbo"})
    with pytest.raises(SpaceError, match="outside"):
        s.encode({**ok, "threads": 65})
    with pytest.raises(SpaceError, match="missing"):
        s.encode({"threads": 8})
    with pytest.raises(SpaceError, match="expected a boolean"):
        s.encode({**ok, "cache": 1})


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(name="x", kind="float", lower=1.0, upper=1.0), "must be <"),
        (dict(name="x", kind="int", lower=0.5, upper=3), "integers"),
        (dict(name="x", kind="categorical", categories=()), "non-empty"),
        (dict(name="x", kind="categorical", categories=("a", "a")), "unique"),
        (dict(name="x", kind="complex"), "unknown kind"),
        (dict(name="1x", kind="bool"), "invalid parameter name"),
    ],
)
def test_parameter_definition_errors(kwargs, message):
    with pytest.raises(SpaceError, match=message):
        Parameter(**kwargs)


def test_duplicate_names_rejected():
    with pytest.raises(SpaceError, match="duplicate"):
        ParameterSpace((Parameter("a", "bool"), Parameter("a", "bool")))


def test_schema_hash_is_stable_and_sensitive():
    a = ParameterSpace((Parameter("n", "int", 1, 10),))
    b = ParameterSpace((Parameter("n", "int", 1.0, 10.0),))
    c = ParameterSpace((Parameter("n", "int", 1, 11),))
    assert a.schema_hash() == b.schema_hash()
    assert a.schema_hash() != c.schema_hash()
    assert len(a.schema_hash()) == 16


def test_load_space_file(tmp_path):
    f = tmp_path / "space.toml"
    f.write_text(
        '[[parameter]]\nname = "mapreduce.job.reduces"\nkind = "int"\nmin = 1\nmax = 100\n\n'
        '[[parameter]]\nname = "codec"\nkind = "categorical"\ncategories = ["lz4", "snappy"]\n'
    )
    s = load_space(f)
    assert s.names == ["mapreduce.job.reduces", "codec"]
    assert s["codec"].categories == ("lz4", "snappy")


def test_load_space_reports_location(tmp_path):
    f = tmp_path / "space.toml"
    f.write_text('[[parameter]]\nname = "a"\nkind = = "int"\n')
    with pytest.raises(SpaceError, match="line 3"):
        load_space(f)
    with pytest.raises(SpaceError, match="parameter #2"):
        space_from_dict({"parameter": [{"name": "a", "kind": "bool"}, {"name": "b"}]}, "s")


def test_bounds_helpers():
    s = _space()
    b = Bounds.whole(s)
    assert b.volume() == 64 * 0.5 * 2 * 3
    assert b.within(s)
    assert Bounds.from_list(b.to_list()) == b
    assert b.contains((1.0, 0.0, 0.0, 0.0)) and not b.contains((65.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError, match="empty"):
        Bounds((0.0,), (0.0,))
