import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parweight.geometry import Exponents
from parweight.report import SchemaError, dumps, loads, read_report, write_report, write_table
from parweight.synthetic import (
    default_grid,
    exp_a1_closed_form,
    exp_aq_closed_form,
    exp_reverse_holder_closed_form,
    generate,
    indicator_battery,
    log_smooth,
)

scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(-(2**53), 2**53),
    st.floats(allow_nan=False),
    st.text(max_size=8),
)
trees = st.recursive(
    scalars,
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=6), kids, max_size=4),
    max_leaves=20,
)


@given(tree=st.dictionaries(st.text(max_size=6), trees, max_size=5))
def test_roundtrip(tree):
    back = loads(dumps(tree))
    assert back.pop("schemaVersion") == 1
    tree.pop("schemaVersion", None)
    assert back == tree


def test_floats_and_special_values():
    text = dumps({"a": 0.1, "b": 2.0, "c": math.inf, "d": -math.inf, "e": math.nan, "f": np.float64(1 / 3)})
    assert '"a": 0.10000000000000001' in text
    assert '"b": 2.0' in text
    assert '"c": "inf"' in text and '"d": "-inf"' in text and '"e": "nan"' in text
    back = loads(text)
    assert back["c"] == math.inf and math.isnan(back["e"])
    assert back["f"] == 1 / 3


def test_dumps_is_deterministic():
    rep = {"z": [1.0, 2.5], "a": {"k": np.arange(3)}, "flag": np.bool_(True)}
    assert dumps(rep) == dumps(dict(rep))
    assert dumps(rep).index('"z"') < dumps(rep).index('"a"')


def test_schema_version_checked(tmp_path):
    with pytest.raises(SchemaError):
        loads('{"schemaVersion": 99}')
    with pytest.raises(SchemaError):
        loads("{}")
    path = tmp_path / "r.json"
    write_report(path, {"x": 1})
    assert read_report(path) == {"schemaVersion": 1, "x": 1}
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]


def test_unserializable_refused():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_write_table(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["level", "value"], [[0, 1.5], [1, math.inf]])
    assert path.read_text() == "level,value\n0,1.5\n1,inf\n"


def test_generators_are_seeded():
    spec = default_grid(1, 8, 32)
    a, b = generate("log-smooth", spec, 3), generate("log-smooth", spec, 3)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, generate("log-smooth", spec, 4).values)
    assert generate("const", spec).values.max() == 1.0
    with pytest.raises(ValueError):
        generate("nope", spec)


def test_log_smooth_amplitude():
    w = log_smooth(default_grid(1, 8, 32), np.random.default_rng(0), amplitude=2.0)
    assert np.max(np.abs(np.log(w.values))) == pytest.approx(2.0)


def test_indicator_battery_refines_consistently():
    coarse = indicator_battery(default_grid(1, 8, 32), np.random.default_rng(1), 3)
    fine = indicator_battery(default_grid(1, 16, 128), np.random.default_rng(1), 3, refine=(2, 4))
    for c, f in zip(coarse, fine):
        assert c.integral() == pytest.approx(f.integral())


def test_closed_forms():
    e = Exponents(2, 2, 0.0)
    L = 0.25
    # lag-free, rate 1: (e^L - 1)/L * e^{-L} * (1 - e^{-L})/L
    ref = math.expm1(L) / L * math.exp(-L) * (-math.expm1(-L)) / L
    assert exp_aq_closed_form(L, e) == pytest.approx(ref)
    assert exp_aq_closed_form(L, e, rate=1e-12) == pytest.approx(1.0)
    assert exp_reverse_holder_closed_form(L, 1.0) < 1
    assert exp_a1_closed_form(L, 0.0) == pytest.approx(math.exp(-L) * math.expm1(L) / L)
    # the lag drops the most recent, largest values from the past half
    assert exp_a1_closed_form(L, 0.5) == pytest.approx((math.exp(-L / 2) - math.exp(-L)) / (L / 2))
