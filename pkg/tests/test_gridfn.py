import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from parweight.geometry import GridSpec, SpaceTimeBox
from parweight.gridfn import (
    GridError,
    GridFunction,
    PrefixTable,
    box_average,
    combine,
    level_measure,
    mean_windows,
    mean_windows_naive,
    power_transform,
    read_csv,
    reverse_time,
    snap_box,
    write_csv,
)


def grid(cells=8, time_cells=16, t1=1.0):
    return GridSpec.regular((cells,), time_cells, (0.0,), (1.0,), 0.0, t1)


def test_rejects_wrong_shape_and_nonfinite():
    with pytest.raises(GridError):
        GridFunction(grid(), np.zeros((8, 15)))
    vals = np.zeros((8, 16))
    vals[0, 0] = np.nan
    with pytest.raises(GridError):
        GridFunction(grid(), vals)


def test_values_are_read_only():
    f = GridFunction.constant(grid(), 1.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_box_average_constant():
    f = GridFunction.constant(grid(), 2.5)
    assert box_average(f, SpaceTimeBox((0.25,), (0.75,), 0.25, 0.5)) == 2.5


def test_box_average_of_time_is_midpoint():
    f = GridFunction.from_callable(grid(8, 64), lambda x, t: t)
    assert math.isclose(box_average(f, SpaceTimeBox((0.0,), (1.0,), 0.25, 0.75)), 0.5, rel_tol=1e-14)


def test_box_average_of_indicator():
    spec = grid(8, 16)
    vals = np.zeros(spec.shape)
    vals[2:4, 4:8] = 1.0
    f = GridFunction(spec, vals)
    box = SpaceTimeBox((0.0,), (0.5,), 0.0, 0.5)
    start, stop = snap_box(spec, box)
    sub = vals[start[0] : stop[0], start[1] : stop[1]]
    assert box_average(f, box) == pytest.approx(sub.sum() / sub.size, rel=0, abs=1e-15)
    assert box_average(f, box) == 8 / 32


def test_snap_box_rejects_outside_and_empty():
    spec = grid()
    with pytest.raises(GridError):
        snap_box(spec, SpaceTimeBox((0.0,), (1.0,), -0.5, 0.5))
    with pytest.raises(GridError):
        snap_box(spec, SpaceTimeBox((0.5,), (0.51,), 0.0, 0.5))


def test_power_transform():
    spec = grid()
    f = GridFunction.from_callable(spec, lambda x, t: 1 + x + t)
    assert power_transform(f, 1) is f
    np.testing.assert_allclose(power_transform(f, -1).values, 1 / f.values, rtol=1e-15)
    q = 3.0
    qc = q / (q - 1)
    back = power_transform(power_transform(f, 1 - qc), 1 - q)
    np.testing.assert_allclose(back.values, f.values, rtol=1e-13)
    with pytest.raises(GridError):
        power_transform(GridFunction.constant(spec, 0.0), -1)


def test_level_measure():
    spec = grid(8, 64)
    f = GridFunction.from_callable(spec, lambda x, t: t)
    assert level_measure(f, -1.0) == pytest.approx(1.0)
    assert level_measure(f, 2.0) == 0.0
    assert abs(level_measure(f, 0.5) - 0.5) <= spec.dt
    w = GridFunction.constant(spec, 3.0)
    assert level_measure(f, -1.0, weight=w) == pytest.approx(3.0)
    region = SpaceTimeBox((0.0,), (0.5,), 0.0, 1.0)
    assert level_measure(f, -1.0, region=region) == pytest.approx(0.5)


def test_combine():
    spec = grid()
    u = GridFunction.from_callable(spec, lambda x, t: np.exp(t))
    v = GridFunction.from_callable(spec, lambda x, t: np.exp(-t))
    assert combine(u, u, "min").values.tolist() == u.values.tolist()
    assert np.all(combine(u, v, "min").values <= u.values)
    np.testing.assert_allclose(combine(u, v, "product").values, 1.0, rtol=1e-15)
    with pytest.raises(ValueError):
        combine(u, v, "sum")
    with pytest.raises(GridError):
        combine(u, GridFunction.constant(grid(4), 1.0), "min")


def test_reverse_time_involution():
    f = GridFunction.from_callable(grid(), lambda x, t: x * t)
    assert np.array_equal(reverse_time(reverse_time(f)).values, f.values)


@settings(max_examples=40, deadline=None)
@given(
    vals=hnp.arrays(np.float64, (5, 7), elements=st.floats(-1e6, 1e6)),
    data=st.data(),
)
def test_prefix_box_sums_match_direct(vals, data):
    tab = PrefixTable(vals, 1.0)
    a0 = data.draw(st.integers(0, 4))
    a1 = data.draw(st.integers(a0 + 1, 5))
    b0 = data.draw(st.integers(0, 6))
    b1 = data.draw(st.integers(b0 + 1, 7))
    direct = math.fsum(vals[a0:a1, b0:b1].ravel().tolist())
    scale = max(1.0, float(np.abs(vals).max()))
    assert abs(tab.box_sum((a0, b0), (a1, b1)) - direct) <= 1e-12 * scale


def test_prefix_table_is_compensated():
    # a huge value next to tiny ones: plain cumsum would lose the tiny ones
    vals = np.full((1, 1000), 1e-8)
    vals[0, 0] = 1e8
    tab = PrefixTable(vals, 1.0)
    assert tab.box_sum((0, 1), (1, 1000)) == pytest.approx(999e-8, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), exponent=st.sampled_from([1.0, 2.0, -0.5]))
def test_mean_windows_matches_naive(seed, exponent):
    rng = np.random.default_rng(seed)
    spec = GridSpec.regular((6, 5), 12, (0.0, 0.0), (1.0, 1.0), 0.0, 1.0)
    f = GridFunction(spec, rng.uniform(0.1, 10, spec.shape))
    # one start array per axis; windows are their outer product
    starts = (np.array([0, 2]), np.array([1, 3]), np.array([0, 4, 8]))
    stops = (starts[0] + 3, starts[1] + 2, starts[2] + 4)
    fast = mean_windows(f, exponent, starts, stops)
    slow = mean_windows_naive(f, exponent, starts, stops)
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_csv_roundtrip(tmp_path):
    spec = GridSpec.regular((3, 2), 4, (0.0, -1.0), (1.0, 1.0), 0.5, 1.5)
    f = GridFunction(spec, np.random.default_rng(0).normal(size=spec.shape))
    path = tmp_path / "g.csv"
    write_csv(f, path)
    g = read_csv(path)
    assert g.spec == spec
    assert np.array_equal(g.values, f.values)


def test_csv_layout(tmp_path):
    spec = GridSpec.regular((2,), 3, (0.0,), (1.0,), 0.0, 1.0)
    f = GridFunction(spec, np.arange(6.0).reshape(2, 3))
    path = tmp_path / "g.csv"
    write_csv(f, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "1,2,3,0,1,0,1"
    assert lines[1:] == ["0,3", "1,4", "2,5"]


@pytest.mark.parametrize(
    "text",
    ["1,2,3,0,1,0\n0,0\n", "1,2,3,0,1,0,1\n0,0\n1,1\n", "x\n", "1,2,3,0,1,0,1\n0,a\n1,1\n2,2\n"],
)
def test_csv_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(GridError):
        read_csv(path)
