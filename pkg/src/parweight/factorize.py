"""Rubio de Francia factorization ``w = u v^{1-q}`` and the product check.

For ``q >= 2`` the sublinear operator

    T f = (w^{-1/q} M^{gamma-}(f^{q-1} w^{1/q}))^{1/(q-1)} + w^{1/q} M^{gamma+}(f w^{-1/q})

is iterated into ``phi = sum_{i>=1} (2B)^{-i} T^i f0`` with ``B`` an upper
bound for the norm of ``T`` on ``L^q``.  Then ``u = w^{1/q} phi^{q-1}`` and
``v = w^{-1/q} phi`` satisfy ``M^{gamma-} u <= (2B)^{q-1} u`` and
``M^{gamma+} v <= 2B v``.  For ``1 < q < 2`` the dual weight is factorized
at the conjugate index in reversed time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Exponents, RectangleFamily
from .gridfn import GridError, GridFunction, reverse_time
from .maximal import extend_nearest, maximal_backward, maximal_forward
from .weights import NumericalError, WeightReport, a1_constant, aq_constant

log = logging.getLogger(__name__)

PROBE_COUNT = 4
MAX_RESTARTS = 8
GROWTH_STREAK = 3


class FactorizationError(NumericalError):
    pass


def _check_weight(w: GridFunction):
    if np.any(w.values <= 0):
        raise GridError("weights must be strictly positive")


def rdf_operator_masked(f: GridFunction, w: GridFunction, exps: Exponents, scales, **kw):
    """``(T f, mask)``: ``T f`` is zero outside the common validity mask."""
    if exps.q < 2:
        raise ValueError(f"the iteration operator needs q >= 2, got q={exps.q}")
    if np.any(f.values < 0):
        raise GridError("T acts on nonnegative functions")
    _check_weight(w)
    q = exps.q
    wq = w.values ** (1 / q)
    back = maximal_backward(GridFunction(w.spec, f.values ** (q - 1) * wq), exps, scales, **kw)
    fwd = maximal_forward(GridFunction(w.spec, f.values / wq), exps, scales, **kw)
    mask = back.mask & fwd.mask
    # prefix differences can leave -1e-30-sized residues where f has decayed
    out = (np.maximum(back.values, 0.0) / wq) ** (1 / (q - 1)) + wq * np.maximum(fwd.values, 0.0)
    return GridFunction(w.spec, np.where(mask, out, 0.0)), mask


def rdf_operator(f: GridFunction, w: GridFunction, exps: Exponents, scales, **kw) -> GridFunction:
    return rdf_operator_masked(f, w, exps, scales, **kw)[0]


def _lq_norm(values: np.ndarray, q: float, cell_volume: float) -> float:
    return (float(np.sum(np.abs(values) ** q)) * cell_volume) ** (1 / q)


def unit_constant(spec, q: float) -> GridFunction:
    """Constant function with unit ``L^q`` norm on the grid domain."""
    return GridFunction.constant(spec, spec.domain.volume ** (-1 / q))


def estimate_norm_bound(w, exps, scales, f0, rng: np.random.Generator, probes: int = PROBE_COUNT, **kw) -> float:
    """Twice the largest ``||T f||_q / ||f||_q`` over ``f0`` and random probes."""
    spec = w.spec
    battery = [f0]
    for _ in range(probes):
        g = rng.random(spec.shape)
        battery.append(GridFunction(spec, g / _lq_norm(g, exps.q, spec.cell_volume)))
    ratios = []
    for f in battery:
        Tf = rdf_operator(f, w, exps, scales, **kw)
        ratios.append(_lq_norm(Tf.values, exps.q, spec.cell_volume) / _lq_norm(f.values, exps.q, spec.cell_volume))
    return 2.0 * max(ratios)


@dataclass
class FactorizationResult:
    u: GridFunction
    v: GridFunction
    phi: GridFunction
    mask: np.ndarray
    B: float
    terms: int
    residual: float
    trace: list = field(default_factory=list)
    restarts: int = 0
    q: float = 2.0
    dual: bool = False
    a1_u: Optional[float] = None
    a1_v: Optional[float] = None
    u_extended: Optional[GridFunction] = None
    v_extended: Optional[GridFunction] = None

    def as_dict(self) -> dict:
        return {
            "B": self.B,
            "terms": self.terms,
            "restarts": self.restarts,
            "residual": self.residual,
            "viaDual": self.dual,
            "a1U": self.a1_u,
            "a1V": self.a1_v,
            "validPoints": int(self.mask.sum()),
            "extendedOutsideMask": bool(not self.mask.all()),
            "termMaxima": list(self.trace),
        }


def _series(w, exps, scales, f0, B, tol, max_terms, **kw):
    term, mask = rdf_operator_masked(f0, w, exps, scales, **kw)
    term = term * (1 / (2 * B))
    phi = term.values.copy()
    trace = [float(term.values.max())]
    streak = 0
    for i in range(1, max_terms):
        if not mask.any():
            raise FactorizationError("empty validity mask")
        floor = float(phi[mask].min())
        if trace[-1] < tol * floor:
            return phi, mask, trace, i
        nxt, _ = rdf_operator_masked(term, w, exps, scales, **kw)
        term = nxt * (1 / (2 * B))
        phi += term.values
        trace.append(float(term.values.max()))
        streak = streak + 1 if trace[-1] > trace[-2] else 0
        if streak >= GROWTH_STREAK or not math.isfinite(trace[-1]):
            return None, mask, trace, i + 1
    raise FactorizationError(f"series did not reach tolerance {tol} in {max_terms} terms")


def _factorize_q_ge_2(w, exps, scales, f0, tol, seed, max_terms, B, **kw):
    spec = w.spec
    f0 = unit_constant(spec, exps.q) if f0 is None else f0
    if B is None:
        B = estimate_norm_bound(w, exps, scales, f0, np.random.default_rng(seed), **kw)
    restarts = 0
    while True:
        phi, mask, trace, terms = _series(w, exps, scales, f0, B, tol, max_terms, **kw)
        if phi is not None:
            break
        restarts += 1
        if restarts > MAX_RESTARTS:
            raise FactorizationError(f"series keeps growing after {MAX_RESTARTS} doublings of B")
        log.info("term growth detected; doubling B to %g", 2 * B)
        B *= 2
    q = exps.q
    wq = w.values ** (1 / q)
    u = np.where(mask, wq * phi ** (q - 1), 0.0)
    v = np.where(mask, phi / wq, 0.0)
    return GridFunction(spec, u), GridFunction(spec, v), GridFunction(spec, phi), mask, B, terms, trace, restarts


def reconstruction_residual(u: GridFunction, v: GridFunction, w: GridFunction, q: float, mask) -> float:
    """Max relative deviation of ``u v^{1-q}`` from ``w`` on ``mask``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rec = u.values * v.values ** (1 - q)
    return float(np.max(np.abs(rec[mask] - w.values[mask]) / w.values[mask]))


def factorize(
    w: GridFunction,
    exps: Exponents,
    scales: Sequence[float],
    f0: Optional[GridFunction] = None,
    tol: float = 1e-10,
    seed: int = 0,
    max_terms: int = 400,
    B: Optional[float] = None,
    measure_a1: bool = True,
    **kw,
) -> FactorizationResult:
    """Factor ``w = u v^{1-q}`` with ``u`` in A_1^+ and ``v`` in A_1^-.

    Outputs are exact on the validity mask and zero outside it; the
    ``*_extended`` fields carry nearest-valid extensions for reporting.
    """
    _check_weight(w)
    scales = tuple(float(s) for s in scales)
    q = exps.q
    if q >= 2:
        u, v, phi, mask, B, terms, trace, restarts = _factorize_q_ge_2(w, exps, scales, f0, tol, seed, max_terms, B, **kw)
        dual = False
    else:
        qc = exps.q_conj
        sigma = reverse_time(GridFunction(w.spec, w.values ** (1 - qc)))
        f0r = None if f0 is None else reverse_time(f0)
        u2, v2, phi2, mask2, B, terms, trace, restarts = _factorize_q_ge_2(
            sigma, exps.with_(q=qc), scales, f0r, tol, seed, max_terms, B, **kw
        )
        u, v, phi = reverse_time(v2), reverse_time(u2), reverse_time(phi2)
        mask = mask2[..., ::-1].copy()
        dual = True
    residual = reconstruction_residual(u, v, w, q, mask)
    res = FactorizationResult(u, v, phi, mask, B, terms, residual, trace, restarts, q, dual)
    res.u_extended = GridFunction(w.spec, extend_nearest(u.values, mask))
    res.v_extended = GridFunction(w.spec, extend_nearest(v.values, mask))
    if measure_a1:
        res.a1_u = a1_constant(res.u_extended, exps, "+", scales, region=mask, **kw).constant
        res.a1_v = a1_constant(res.v_extended, exps, "-", scales, region=mask, **kw).constant
    return res


def product_synthesis_check(
    u: GridFunction,
    v: GridFunction,
    exps: Exponents,
    family: RectangleFamily,
    delta: Optional[float] = None,
    scales: Optional[Sequence[float]] = None,
) -> WeightReport:
    """A_q^+ constant of ``u v^{1-q}`` at lag ``delta``.

    The lag of ``exps`` is the A_1 lag of the factors and must satisfy
    ``gamma < delta 2^{1-p}``.  With ``scales`` the A_1 constants of both
    factors are measured and attached to the report.
    """
    # The lag relation is strict, so the default sits a factor 2 inside it.
    delta = 2.0**exps.p * exps.gamma if delta is None else float(delta)
    if exps.gamma > 0 and not exps.gamma < delta * 2.0 ** (1 - exps.p):
        raise ValueError(f"lag gamma={exps.gamma} must lie below delta*2^(1-p)={delta * 2.0 ** (1 - exps.p)}")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    _check_weight(u)
    _check_weight(v)
    w = GridFunction(u.spec, u.values * v.values ** (1 - exps.q))
    rep = aq_constant(w, exps.with_(gamma=delta), "+", family)
    rep.params["factorLag"] = exps.gamma
    if scales is not None:
        rep.params["a1U"] = a1_constant(u, exps, "+", scales).constant
        rep.params["a1V"] = a1_constant(v, exps, "-", scales).constant
    return rep
