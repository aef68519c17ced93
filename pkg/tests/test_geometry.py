import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parweight.geometry import (
    EmptyFamilyError,
    Exponents,
    GridSpec,
    ParabolicRectangle,
    SpaceTimeBox,
    dyadic_scales,
    enumerate_family,
    lagged_halves,
    translate_time,
)


def test_exponents_validation():
    with pytest.raises(ValueError):
        Exponents(p=1.0)
    with pytest.raises(ValueError):
        Exponents(q=1.0)
    with pytest.raises(ValueError):
        Exponents(gamma=1.0)
    with pytest.raises(ValueError):
        Exponents(gamma=-0.1)
    e = Exponents(2, 3, 0.25)
    assert e.q_conj == 1.5
    assert e.dual_exponent == -0.5
    assert e.with_(q=2).q == 2 and e.with_(q=2).gamma == 0.25


def test_lagged_halves_example():
    lower, upper = lagged_halves(ParabolicRectangle((0.0,), 0.0, 1.0), 0.5, 2)
    assert (upper.lo, upper.hi, upper.t0, upper.t1) == ((-0.5,), (0.5,), 0.5, 1.0)
    assert (lower.lo, lower.hi, lower.t0, lower.t1) == ((-0.5,), (0.5,), -1.0, -0.5)


def test_lag_free_upper_half():
    R = ParabolicRectangle((0.3,), 1.0, 0.5)
    _, upper = lagged_halves(R, 0.0, 2)
    assert upper.t0 == R.t and upper.t1 == R.t + 0.25


def test_half_volumes():
    lower, upper = lagged_halves(ParabolicRectangle((0.0,), 0.0, 2.0), 0.25, 3)
    assert lower.volume == upper.volume == 12.0


@given(
    x=st.floats(-10, 10),
    t=st.integers(-80, 80).map(lambda k: k / 8),
    l=st.floats(0.1, 5),
    p=st.floats(1.1, 4),
    gamma=st.floats(0, 0.99),
)
def test_halves_disjoint_and_inside(x, t, l, p, gamma):
    R = ParabolicRectangle((x,), t, l)
    lower, upper = lagged_halves(R, gamma, p)
    full = R.full(p)
    assert full.contains(lower, tol=1e-9) and full.contains(upper, tol=1e-9)
    assert lower.t1 <= upper.t0
    assert math.isclose(lower.volume, upper.volume, rel_tol=1e-9)
    assert math.isclose(lower.volume, l * (1 - gamma) * l**p, rel_tol=1e-9)


def test_translate_time():
    B = SpaceTimeBox((0.0,), (1.0,), 0.0, 1.0)
    assert translate_time(B, 1.0) == SpaceTimeBox((0.0,), (1.0,), 1.0, 2.0)
    assert translate_time(B, 0.0) == B


@given(a=st.integers(-1000, 1000).map(lambda k: k / 8))
def test_translate_inverse(a):
    B = SpaceTimeBox((0.0, -1.0), (1.0, 2.0), -0.5, 0.75)
    assert translate_time(translate_time(B, a), -a) == B


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        SpaceTimeBox((0.0,), (0.0,), 0.0, 1.0)
    with pytest.raises(ValueError):
        SpaceTimeBox((0.0,), (1.0,), 1.0, 1.0)


def test_grid_spec_basics():
    spec = GridSpec.regular((8, 4), 16, (0.0, -1.0), (1.0, 1.0), 0.0, 2.0)
    assert spec.shape == (8, 4, 16)
    assert spec.spacing == (0.125, 0.5)
    assert spec.dt == 0.125
    assert spec.cell_volume == 0.125 * 0.5 * 0.125
    assert spec.point((0, 0, 0)) == (0.0625, -0.75, 0.0625)
    assert spec.with_time(1.0, 3.0, 32).dt == 0.0625


def test_family_small_example():
    spec = GridSpec.regular((8,), 64, (0.0,), (1.0,), 0.0, 1.0)
    fam = enumerate_family(spec, 2, 1, stride=1.0, l_min=1 / 8)
    (lv,) = fam.levels
    assert lv.k == (1,) and lv.m == 1
    assert len(lv.starts[0]) == 8 and len(lv.centers) == 63
    for R in fam.rectangles:
        assert spec.domain.contains(R.full(2), tol=1e-12)


def test_family_skips_scales_that_do_not_fit():
    spec = GridSpec.regular((16,), 64, (0.0,), (1.0,), 0.0, 1.0)
    fam = enumerate_family(spec, 2, 6)
    assert fam.scales == [1 / 16, 1 / 8, 1 / 4, 1 / 2]
    assert fam.provenance["skippedScales"] == [1.0, 2.0]


def test_family_raises_when_empty():
    spec = GridSpec.regular((4,), 4, (0.0,), (1.0,), 0.0, 0.01)
    with pytest.raises(EmptyFamilyError):
        enumerate_family(spec, 2, 3, l_min=0.5)


def _brute_force_size(domain, scales, p, stride):
    """Count lattice rectangles by direct containment in continuous coordinates."""
    count = 0
    for l in scales:
        L = l**p
        for i in range(10_000):
            x0 = domain.lo[0] + i * stride * l
            if x0 + l > domain.hi[0] + 1e-12:
                break
            for j in range(10_000):
                t = domain.t0 + L + j * stride * L
                if t + L > domain.t1 + 1e-12:
                    break
                box = ParabolicRectangle((x0 + l / 2,), t, l).full(p)
                count += domain.contains(box, tol=1e-12)
    return count


def test_family_size_matches_enumeration():
    spec = GridSpec.regular((16,), 128, (0.0,), (1.0,), 0.0, 2.0)
    fam = enumerate_family(spec, 2, 2, stride=0.5, l_min=0.25)
    assert fam.scales == [0.25, 0.5]
    assert fam.size == _brute_force_size(spec.domain, [0.25, 0.5], 2, 0.5)


@settings(max_examples=30, deadline=None)
@given(
    cells=st.integers(4, 24),
    time_cells=st.integers(8, 128),
    t1=st.floats(0.25, 4),
    count=st.integers(1, 5),
    stride=st.sampled_from([0.25, 0.5, 1.0]),
)
def test_family_containment(cells, time_cells, t1, count, stride):
    spec = GridSpec.regular((cells,), time_cells, (0.0,), (1.0,), 0.0, t1)
    try:
        fam = enumerate_family(spec, 2, count, stride)
    except EmptyFamilyError:
        return
    # rectangles are snapped to whole cells: the cell windows lie inside the
    # grid exactly, the continuous rectangles within half a cell
    tol = max(spec.dt, *spec.spacing) / 2 + 1e-12
    for li, lv in enumerate(fam.levels):
        assert lv.starts[0][-1] + lv.k[0] <= cells
        assert lv.centers[0] - lv.m >= 0 and lv.centers[-1] + lv.m <= time_cells
        for idx in [(0, 0), tuple(n - 1 for n in lv.grid_shape)]:
            R = fam.rectangle(li, idx)
            assert spec.domain.contains(R.full(2), tol=tol)


def test_locate_roundtrip():
    spec = GridSpec.regular((16,), 128, (0.0,), (1.0,), 0.0, 1.0)
    fam = enumerate_family(spec, 2, 3)
    flat = 0
    for li, lv in enumerate(fam.levels):
        for idx in np.ndindex(*lv.grid_shape):
            assert fam.locate(flat) == (li, idx)
            flat += 1
    assert flat == fam.size == len(fam.rectangles)


def test_dyadic_scales():
    spec = GridSpec.regular((16,), 64, (0.0,), (1.0,), 0.0, 1.0)
    assert dyadic_scales(spec, 3) == [1 / 16, 1 / 8, 1 / 4]
    assert dyadic_scales(spec, 2, l_min=0.3) == [0.3, 0.6]
    with pytest.raises(ValueError):
        dyadic_scales(spec, 0)
