import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parweight.bmo import (
    FitRefused,
    bmo_to_weight,
    bridge_offsets,
    family_cells,
    jn_decay_fit,
    pbmo_objective,
    pbmo_seminorm,
    weight_to_bmo,
)
from parweight.geometry import Exponents, ParabolicRectangle, enumerate_family
from parweight.gridfn import GridFunction, reverse_time
from parweight.synthetic import default_grid, exp_time, log_smooth
from parweight.weights import aq_constant

SPEC = default_grid(1, 16, 128)
FAM = enumerate_family(SPEC, 2, 3)
E = Exponents(2, 2, 0.25)


def logu(w):
    return weight_to_bmo(w, -1.0)


def brute_seminorm(u, exps, family, direction="+"):
    """Minimise the objective over every merged half value, rectangle by rectangle."""
    best = 0.0
    for li, lv in enumerate(family.levels):
        if lv.half_windows(exps.gamma, family.spec, exps.p, "+") is None:
            continue
        for idx in np.ndindex(*lv.grid_shape):
            cells = family_cells(family, li, idx, exps.gamma)
            halves = {h: u.values[tuple(slice(s, e) for s, e in zip(*cells[h]))].ravel() for h in "+-"}
            ex, de = (halves["+"], halves["-"]) if direction == "+" else (halves["-"], halves["+"])
            cand = np.concatenate([ex, de])
            obj = [np.mean(np.maximum(ex - a, 0)) + np.mean(np.maximum(a - de, 0)) for a in cand]
            best = max(best, min(obj))
    return best


def test_constant_and_monotone_decreasing_have_zero_seminorm():
    assert pbmo_seminorm(GridFunction.constant(SPEC, 3.0), E, FAM).seminorm == 0.0
    # u = -t: later values never exceed earlier ones
    assert pbmo_seminorm(GridFunction.from_callable(SPEC, lambda x, t: -t), E, FAM).seminorm == 0.0


def test_increasing_time_is_penalised():
    u = GridFunction.from_callable(SPEC, lambda x, t: t)
    rep = pbmo_seminorm(u, E, FAM)
    assert rep.seminorm > 0
    L = rep.witness.l**2
    # the upper half sits (1 + gamma) L above the lower one on average
    assert rep.seminorm == pytest.approx((1 + E.gamma) * L, rel=0.05)
    d = rep.as_dict()
    assert d["witnessOffset"] == rep.witness_offset


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), direction=st.sampled_from("+-"))
def test_matches_brute_force(seed, direction):
    u = logu(log_smooth(SPEC, np.random.default_rng(seed)))
    rep = pbmo_seminorm(u, E, FAM, direction)
    assert rep.seminorm == pytest.approx(brute_seminorm(u, E, FAM, direction), rel=1e-12, abs=1e-15)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_optimal_offsets_beat_canonical(seed):
    u = logu(log_smooth(SPEC, np.random.default_rng(seed), amplitude=2.0))
    rep = pbmo_seminorm(u, E, FAM)
    canon = pbmo_objective(u, E, FAM, rep.canonical_offsets)
    for opt, c in zip(rep.per_level, canon):
        if opt is not None:
            assert np.all(opt <= c + 1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_reflection_swaps_direction(seed):
    u = logu(log_smooth(SPEC, np.random.default_rng(seed)))
    fwd = pbmo_seminorm(u, E, FAM, "+").seminorm
    back = pbmo_seminorm(reverse_time(u), E, FAM, "-").seminorm
    assert back == pytest.approx(fwd, rel=1e-12)


def test_invariant_under_constants():
    u = logu(log_smooth(SPEC, np.random.default_rng(3)))
    base = pbmo_seminorm(u, E, FAM).seminorm
    shifted = GridFunction(SPEC, u.values + 7.0)
    assert pbmo_seminorm(shifted, E, FAM).seminorm == pytest.approx(base, rel=1e-12)


def test_rejects_bad_direction():
    with pytest.raises(ValueError):
        pbmo_seminorm(GridFunction.constant(SPEC, 1.0), E, FAM, "x")


def test_bridge_bound_for_aq_weight():
    w = exp_time(SPEC)
    u = weight_to_bmo(w, 1.0)
    offs = bridge_offsets(w, E, FAM)
    obj = pbmo_objective(u, E, FAM, offs)
    bound = math.log(aq_constant(w, E, "+", FAM).constant)
    # with the bridge offsets the objective is controlled by log A_q^+
    assert max(float(np.max(o)) for o in obj if o is not None) <= 1 + bound


def test_weight_roundtrip():
    u = logu(log_smooth(SPEC, np.random.default_rng(0)))
    back = weight_to_bmo(bmo_to_weight(u, 0.5), 2.0)
    np.testing.assert_allclose(back.values, u.values, rtol=1e-12, atol=1e-14)
    with pytest.raises(OverflowError):
        bmo_to_weight(GridFunction.constant(SPEC, 1e4), 1.0)


def test_jn_fit_on_exponential_tail():
    spec = default_grid(1, 32, 256, t1=2.0)
    fam = enumerate_family(spec, 2, 1, l_min=1.0)
    # -log of a uniform variable has a unit exponential tail
    rng = np.random.default_rng(0)
    vals = np.zeros(spec.shape)
    vals[:, spec.time_cells // 2 :] = -np.log(rng.uniform(size=(32, spec.time_cells // 2)))
    u = GridFunction(spec, vals)
    cells = family_cells(fam, 0, (0, 0), 0.0)
    fit = jn_decay_fit(u, Exponents(2, 2, 0.0), cells, 0.0, lambda_grid=np.linspace(0, 3, 13))
    assert fit.side == "+"
    assert fit.B == pytest.approx(1.0, rel=0.1)
    assert fit.quality > 0.95


def test_jn_degenerate_and_refused():
    R = ParabolicRectangle((0.5,), 0.5, 0.5)
    fit = jn_decay_fit(GridFunction.constant(SPEC, 1.0), E, R, 1.0)
    assert fit.degenerate and fit.B == math.inf
    vals = np.zeros(SPEC.shape)
    vals[8, 83] = 5.0
    with pytest.raises(FitRefused):
        jn_decay_fit(GridFunction(SPEC, vals), E, R, 0.0, lambda_grid=np.linspace(0, 4, 9))
