import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parweight.construct import (
    MeasureSpec,
    PipelineError,
    PointMass,
    SupersolutionSpec,
    cr_bmo,
    cr_decompose,
    cr_weight_detail,
    heat_residual,
    maximal_of_measure,
    maximal_of_measure_exact,
    maximal_of_points_continuous,
    supersolution,
    supersolution_representation,
    weak_pairing,
)
from parweight.geometry import Exponents, GridSpec, dyadic_scales
from parweight.gridfn import GridError, GridFunction, write_csv
from parweight.synthetic import default_grid, exp_time, log_smooth

SPEC = default_grid(1, 16, 64)
SCALES = dyadic_scales(SPEC, 3)
E = Exponents(2, 2, 0.25)

points = st.lists(
    st.tuples(st.floats(-0.2, 1.2), st.floats(-0.3, 1.1), st.floats(0.1, 5.0)), min_size=1, max_size=4
)


def test_measure_validation(tmp_path):
    with pytest.raises(ValueError):
        PointMass((0.0,), 0.0, 0.0)
    with pytest.raises(GridError):
        MeasureSpec(density=GridFunction.constant(SPEC, -1.0))
    with pytest.raises(ValueError):
        MeasureSpec()
    write_csv(GridFunction.constant(SPEC, 2.0), tmp_path / "d.csv")
    text = json.dumps({"points": [{"x": [0.5], "t": 0.2, "mass": 1.5}], "density": "d.csv"})
    m = MeasureSpec.from_json(text, base_dir=tmp_path)
    assert m.points == (PointMass((0.5,), 0.2, 1.5),)
    assert m.density.spec == SPEC
    assert m.as_dict()["points"][0]["mass"] == 1.5


@settings(max_examples=20, deadline=None)
@given(pts=points, direction=st.sampled_from("+-"), with_density=st.booleans(), seed=st.integers(0, 99))
def test_matches_exact_oracle(pts, direction, with_density, seed):
    dens = GridFunction(SPEC, np.random.default_rng(seed).uniform(0, 1, SPEC.shape)) if with_density else None
    m = MeasureSpec(tuple(PointMass((x,), t, w) for x, t, w in pts), dens)
    fast = maximal_of_measure(m, E, direction, SCALES, SPEC)
    slow, mask = maximal_of_measure_exact(m, E, direction, SCALES, SPEC)
    assert np.array_equal(fast.mask, mask)
    np.testing.assert_allclose(fast.values[mask], slow[mask], rtol=1e-12, atol=1e-12)


def test_point_masses_are_seen_outside_the_domain():
    m = MeasureSpec.from_points([((0.5,), -0.2, 1.0)])
    res = maximal_of_measure(m, E, "-", SCALES + [1.0], SPEC)
    assert res.mask.all() and not res.clipped
    # the mass at t = -0.2 is only reached by the largest scale
    x, t = SPEC.mesh()
    cont = np.array(
        [maximal_of_points_continuous(m.points, (xi,), ti, E, "-", [1.0]) for xi, ti in zip(x.ravel(), t.ravel())]
    ).reshape(SPEC.shape)
    # snapping moves window edges by at most a cell, so zero and nonzero sets agree away from edges
    assert res.values.max() == pytest.approx(1.0 / 0.75, rel=0.1)
    assert np.count_nonzero(res.values) == pytest.approx(np.count_nonzero(cont), rel=0.25)


def test_cr_weight():
    m = MeasureSpec.from_points([((0.5,), 0.5, 1.0)])
    cw = cr_weight_detail(m, 0.5, E, SCALES, SPEC)
    assert cw.clamped > 0  # cells that never see the mass
    assert np.all(cw.weight.values > 0)
    with pytest.raises(ValueError):
        cr_weight_detail(m, 1.0, E, SCALES, SPEC)
    with pytest.raises(ValueError):
        maximal_of_measure(m, E, "-", SCALES)


def test_cr_decompose_reconstructs():
    w = exp_time(SPEC)
    dec = cr_decompose(w, E, 0.5, SCALES)
    assert dec.delta == pytest.approx(2 / 3)
    assert dec.bounded and dec.k_ratio < 10
    mm = maximal_of_measure(dec.measure, E, "-", SCALES)
    rec = dec.K.values * mm.values**dec.delta
    np.testing.assert_allclose(rec[dec.mask], w.values[dec.mask], rtol=1e-12)
    assert dec.as_dict()["kRatio"] == dec.k_ratio
    with pytest.raises(ValueError):
        cr_decompose(w, E, 0.0, SCALES)


def test_cr_bmo():
    b = log_smooth(SPEC, np.random.default_rng(0))
    m = MeasureSpec.from_points([((0.5,), -0.5, 1.0)])
    assert np.array_equal(cr_bmo(m, m, 0.0, 0.0, b, E, SCALES).f.values, b.values)
    res = cr_bmo(m, m, 0.5, 0.0, b, E, SCALES + [1.0, 2.0])
    assert np.all(np.isfinite(res.f.values))
    with pytest.raises(ValueError):
        cr_bmo(m, m, -1.0, 0.0, b, E, SCALES)


def test_supersolutions():
    v = supersolution(SupersolutionSpec("increasingTime", rate=2.0), SPEC, E)
    np.testing.assert_allclose(v.values, np.exp(2 * SPEC.mesh()[-1]))
    grid = GridSpec.regular((32,), 64, (-1.0,), (1.0,), 1.0, 2.0)
    heat = supersolution(SupersolutionSpec("heatKernel", t0=0.0), grid, E)
    prod = supersolution(SupersolutionSpec("product", components=(SupersolutionSpec("heatKernel"),) * 2), grid, E)
    np.testing.assert_allclose(prod.values, heat.values**2, rtol=1e-14)
    with pytest.raises(ValueError):
        supersolution(SupersolutionSpec("heatKernel"), grid, Exponents(3, 2, 0.25))
    with pytest.raises(ValueError):
        supersolution(SupersolutionSpec("heatKernel", t0=0.99), grid, E)
    with pytest.raises(ValueError):
        SupersolutionSpec("other")
    with pytest.raises(ValueError):
        SupersolutionSpec("increasingTime", rate=0.0)


def test_heat_residual_converges():
    res = []
    for r in range(3):
        grid = GridSpec.regular((16 * 2**r,), 64 * 4**r, (-1.0,), (1.0,), 1.0, 2.0)
        res.append(heat_residual(supersolution(SupersolutionSpec("heatKernel"), grid, E)))
    assert res[0] > 3 * res[1] > 9 * res[2]


def test_weak_pairing_of_exp_t():
    # for v = e^t and a bump phi, the pairing is -int e^t d_t phi = int e^t phi > 0
    spec = GridSpec.regular((64,), 256, (0.0,), (1.0,), 0.0, 1.0)
    x, t = spec.mesh()
    phi = GridFunction(spec, (np.sin(np.pi * x) * np.sin(np.pi * t)) ** 2)
    v = exp_time(spec)
    val = weak_pairing(v, phi, 2.0)
    ref = float(np.sum(v.values * phi.values)) * spec.cell_volume
    assert val > 0
    assert val == pytest.approx(ref, rel=1e-3)


def test_representation_of_constant_is_degenerate():
    rep = supersolution_representation(GridFunction.constant(SPEC, 2.0), E, SCALES)
    assert rep.stages == {"degenerate": True}
    assert rep.b_ratio == 1.0 and rep.residual == 0.0


def test_representation_of_exp_t():
    spec = default_grid(1, 16, 128)
    v = exp_time(spec)
    rep = supersolution_representation(v, E, dyadic_scales(spec, 3))
    assert rep.residual <= 1e-10
    assert rep.alpha > 0 and rep.beta > 0
    assert math.isfinite(rep.b_ratio)
    d = rep.as_dict()
    assert d["eps"] == rep.eps and "epsScan" in d["stages"]


def test_representation_reports_stage():
    vals = np.ones(SPEC.shape)
    vals[0, 0] = 0.0
    with pytest.raises(PipelineError) as info:
        supersolution_representation(GridFunction(SPEC, vals), E, SCALES)
    assert info.value.stage == "input"
    v = GridFunction(SPEC, np.exp(-40 * SPEC.mesh()[-1]))
    with pytest.raises(PipelineError) as info:
        supersolution_representation(v, E, SCALES, eps_grid=(1.0,), a2_bound=1.0)
    assert info.value.stage == "weight"
