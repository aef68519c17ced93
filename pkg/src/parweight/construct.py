"""Weights and PBMO functions built from measures, and analytic supersolutions.

Maximal functions of measures use the same half-rectangle geometry as
:mod:`parweight.maximal`.  A measure with a density is only known on the grid
domain, so rectangles must fit the domain (points without an admissible
scale are masked).  A measure made purely of point masses is known on all
of space-time, so rectangles are allowed to leave the domain and every grid
point is valid.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bmo import bmo_to_weight, weight_to_bmo
from .geometry import Exponents, GridSpec, RectangleFamily, enumerate_family
from .gridfn import FLOOR_EPS, GridError, GridFunction, read_csv
from .maximal import _anchor_windows, extend_nearest, forward_offsets
from .weights import aq_constant
from .factorize import factorize

log = logging.getLogger(__name__)

HEAT_MARGIN_CELLS = 10


@dataclass(frozen=True)
class PointMass:
    x: tuple[float, ...]
    t: float
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not self.mass > 0:
            raise ValueError("point masses must be positive")


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """Point masses plus an optional density sampled on a grid."""

    points: tuple[PointMass, ...] = ()
    density: Optional[GridFunction] = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if self.density is not None and np.any(self.density.values < 0):
            raise GridError("density must be nonnegative")
        total = sum(pm.mass for pm in self.points)
        if self.density is not None:
            total += self.density.integral()
        if not (total > 0 and math.isfinite(total)):
            raise ValueError("measure must have finite positive total mass")

    @classmethod
    def from_points(cls, pts) -> "MeasureSpec":
        """From ``[(x, t, mass), ...]`` with ``x`` a sequence."""
        return cls(tuple(PointMass(tuple(x), t, m) for x, t, m in pts))

    @classmethod
    def from_json(cls, text: str, base_dir=None) -> "MeasureSpec":
        data = json.loads(text)
        pts = tuple(PointMass(tuple(p["x"]), p["t"], p["mass"]) for p in data.get("points", []))
        dens = data.get("density")
        if dens is not None:
            import os

            dens = read_csv(dens if base_dir is None else os.path.join(base_dir, dens))
        return cls(pts, dens)

    def as_dict(self) -> dict:
        return {
            "points": [{"x": list(p.x), "t": p.t, "mass": p.mass} for p in self.points],
            "density": None if self.density is None else "<grid>",
        }


def _bin(spec: GridSpec, pm: PointMass) -> tuple[int, ...]:
    d = spec.domain
    idx = [math.floor((c - lo) / h) for c, lo, h in zip(pm.x, d.lo, spec.spacing)]
    idx.append(math.floor((pm.t - d.t0) / spec.dt))
    return tuple(idx)


@dataclass(frozen=True, eq=False)
class MeasureMaximal:
    output: GridFunction
    mask: np.ndarray
    clipped: bool

    @property
    def values(self):
        return self.output.values


def _half_windows(spec: GridSpec, off, direction: str, clip: bool):
    """Anchors and windows of ``R^+`` (``'+'``) or ``R^-`` (``'-'``) for one scale."""
    anchors, starts, stops = _anchor_windows(spec, off, clip=clip)
    if direction == "-":
        T = spec.time_cells
        j = np.arange(off.b - 1, T) if clip else np.arange(T)
        anchors[-1] = j
        starts[-1] = j + 1 - off.b
        stops[-1] = j + 1 - off.a
    return anchors, starts, stops


def maximal_of_measure(
    m: MeasureSpec,
    exps: Exponents,
    direction: str,
    scales: Sequence[float],
    spec: Optional[GridSpec] = None,
    clip: Optional[bool] = None,
) -> MeasureMaximal:
    """``sup_l m(R^{+-}(gamma)) / |R^{+-}(gamma)|`` at every cell centre.

    ``direction='-'`` uses the lower halves (``M^{gamma-}``).  Point masses
    are binned to the cell that contains them; ``clip`` defaults to True
    exactly when the measure has a density.
    """
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    if spec is None:
        if m.density is None:
            raise ValueError("a grid is needed for a pure point-mass measure")
        spec = m.density.spec
    if m.density is not None and m.density.spec != spec:
        raise GridError("density lives on a different grid")
    clip = (m.density is not None) if clip is None else clip
    best = np.full(spec.shape, -np.inf)
    binned = [(_bin(spec, pm), pm.mass) for pm in m.points]
    for l in scales:
        off = forward_offsets(spec, l, exps.p, exps.gamma)
        if off is None:
            continue
        anchors, starts, stops = _half_windows(spec, off, direction, clip)
        if any(len(a) == 0 for a in anchors):
            continue
        firsts = [int(a[0]) for a in anchors]
        acc = np.zeros(tuple(len(a) for a in anchors))
        if m.density is not None:
            acc += m.density.table(1.0).window_sums(starts, stops) / off.count
        vol = off.count * spec.cell_volume
        for cell, mass in binned:
            # Anchors whose window contains the cell form a box.
            lo = [c - sh - kk + 1 for c, sh, kk in zip(cell[:-1], off.spatial_shift, off.k)]
            hi = [c - sh + 1 for c, sh in zip(cell[:-1], off.spatial_shift)]
            j = cell[-1]
            if direction == "+":
                lo.append(j - off.b + 1)
                hi.append(j - off.a + 1)
            else:
                lo.append(j + off.a)
                hi.append(j + off.b)
            box = []
            for a_lo, a_hi, first, n in zip(lo, hi, firsts, acc.shape):
                a0, a1 = max(a_lo - first, 0), min(a_hi - first, n)
                if a1 <= a0:
                    break
                box.append(slice(a0, a1))
            else:
                acc[tuple(box)] += mass / vol
        sl = tuple(slice(f, f + n) for f, n in zip(firsts, acc.shape))
        np.maximum(best[sl], acc, out=best[sl])
    mask = np.isfinite(best)
    if not mask.any():
        raise GridError("no admissible scale at any point")
    return MeasureMaximal(GridFunction(spec, np.where(mask, best, 0.0)), mask, clip)


def maximal_of_measure_exact(
    m: MeasureSpec, exps: Exponents, direction: str, scales, spec: GridSpec, clip: Optional[bool] = None, points=None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point loop testing each mass against its snapped half-open box (oracle)."""
    clip = (m.density is not None) if clip is None else clip
    d = spec.domain
    vals = np.zeros(spec.shape)
    best = np.full(spec.shape, -np.inf)
    pts = list(np.ndindex(*spec.shape)) if points is None else [tuple(p) for p in points]
    offs = [forward_offsets(spec, l, exps.p, exps.gamma) for l in scales]
    dens = None if m.density is None else m.density.values
    for pt in pts:
        for off in offs:
            if off is None:
                continue
            lo = [i + s for i, s in zip(pt[:-1], off.spatial_shift)]
            hi = [a + kk for a, kk in zip(lo, off.k)]
            j = pt[-1]
            t0, t1 = (j + off.a, j + off.b) if direction == "+" else (j + 1 - off.b, j + 1 - off.a)
            lo.append(t0)
            hi.append(t1)
            inside = all(a >= 0 for a in lo) and all(b <= n for b, n in zip(hi, spec.shape))
            if clip and not inside:
                continue
            total = 0.0
            if dens is not None:
                sl = tuple(slice(max(a, 0), min(b, n)) for a, b, n in zip(lo, hi, spec.shape))
                total += float(np.sum(dens[sl])) * spec.cell_volume
            for pm in m.points:
                ok = all(
                    d.lo[a] + lo[a] * h <= pm.x[a] < d.lo[a] + hi[a] * h for a, h in enumerate(spec.spacing)
                )
                if ok and d.t0 + lo[-1] * spec.dt <= pm.t < d.t0 + hi[-1] * spec.dt:
                    total += pm.mass
            best[pt] = max(best[pt], total / (off.count * spec.cell_volume))
    mask = np.isfinite(best)
    vals[mask] = best[mask]
    return vals, mask


def maximal_of_points_continuous(
    points: Sequence[PointMass], x, t: float, exps: Exponents, direction: str, scales
) -> float:
    """Grid-free value at ``(x, t)``: masses in open continuous halves over ``scales``."""
    best = 0.0
    for l in scales:
        L = l**exps.p
        vol = l ** len(x) * (1 - exps.gamma) * L
        if direction == "-":
            t0, t1 = t - L, t - exps.gamma * L
        else:
            t0, t1 = t + exps.gamma * L, t + L
        total = sum(
            pm.mass
            for pm in points
            if t0 < pm.t < t1 and all(abs(c - xc) < l / 2 for c, xc in zip(pm.x, x))
        )
        best = max(best, total / vol)
    return best


# -- Coifman-Rochberg constructions -----------------------------------------


@dataclass(frozen=True, eq=False)
class CRWeight:
    weight: GridFunction
    mask: np.ndarray
    clamped: int


def cr_weight_detail(
    m: MeasureSpec, delta: float, exps: Exponents, scales, spec: Optional[GridSpec] = None, floor: float = FLOOR_EPS
) -> CRWeight:
    """``(M^{gamma-} m)^delta`` with masked points filled from the nearest valid cell."""
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    mm = maximal_of_measure(m, exps, "-", scales, spec)
    vals = extend_nearest(mm.values, mm.mask)
    low = vals < floor
    clamped = int(low.sum()) if delta > 0 else 0
    if clamped:
        log.warning("clamping %d vanishing maximal values to %g", clamped, floor)
        vals = np.maximum(vals, floor)
    return CRWeight(GridFunction(mm.output.spec, np.power(vals, delta)), mm.mask, clamped)


def cr_weight(m: MeasureSpec, delta: float, exps: Exponents, scales, spec: Optional[GridSpec] = None) -> GridFunction:
    return cr_weight_detail(m, delta, exps, scales, spec).weight


@dataclass(frozen=True, eq=False)
class CRDecomposition:
    K: GridFunction
    measure: MeasureSpec
    delta: float
    mask: np.ndarray
    k_min: float
    k_max: float
    bounded: bool

    @property
    def k_ratio(self) -> float:
        return self.k_max / self.k_min

    def as_dict(self) -> dict:
        return {"delta": self.delta, "kMin": self.k_min, "kMax": self.k_max, "kRatio": self.k_ratio, "bounded": self.bounded}


def cr_decompose(
    w: GridFunction, exps: Exponents, eps: float, scales, direction: str = "+", bound: float = 1e6
) -> CRDecomposition:
    """``w = K (M mu)^delta`` with ``mu = w^{1+eps}`` and ``delta = 1/(1+eps)``.

    ``direction='+'`` (A_1^+ weights) uses ``M^{gamma-}``; ``'-'`` uses
    ``M^{gamma+}``.  ``K`` is exact on the validity mask and extended by
    nearest values outside.  ``bounded`` is False when ``max K / min K``
    exceeds ``bound`` (the hypothesis on ``w`` is then in doubt).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if np.any(w.values <= 0):
        raise GridError("weights must be strictly positive")
    mu = MeasureSpec(density=GridFunction(w.spec, w.values ** (1 + eps)))
    delta = 1 / (1 + eps)
    mm = maximal_of_measure(mu, exps, "-" if direction == "+" else "+", scales)
    K = np.where(mm.mask, w.values / np.where(mm.mask, mm.values, 1.0) ** delta, 0.0)
    K = extend_nearest(K, mm.mask)
    kv = K[mm.mask]
    kmin, kmax = float(kv.min()), float(kv.max())
    return CRDecomposition(GridFunction(w.spec, K), mu, delta, mm.mask, kmin, kmax, kmax / kmin <= bound)


@dataclass(frozen=True, eq=False)
class CRBmo:
    f: GridFunction
    mask: np.ndarray
    clamped: int


def cr_bmo(
    mu: MeasureSpec,
    nu: MeasureSpec,
    alpha: float,
    beta: float,
    b: GridFunction,
    exps: Exponents,
    scales,
    floor: float = FLOOR_EPS,
) -> CRBmo:
    """``f = -alpha log M^{gamma-} mu + beta log M^{gamma+} nu + b`` on the grid of ``b``."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    spec = b.spec
    f = b.values.copy()
    mask = np.ones(spec.shape, dtype=bool)
    clamped = 0
    for coef, meas, direction in ((-alpha, mu, "-"), (beta, nu, "+")):
        if coef == 0:
            continue
        mm = maximal_of_measure(meas, exps, direction, scales, spec)
        vals = extend_nearest(mm.values, mm.mask)
        low = vals < floor
        clamped += int(low.sum())
        f += coef * np.log(np.maximum(vals, floor))
        mask &= mm.mask
    if clamped:
        log.warning("clamped %d vanishing maximal values to %g", clamped, floor)
    return CRBmo(GridFunction(spec, f), mask, clamped)


# -- analytic supersolutions ------------------------------------------------


@dataclass(frozen=True)
class SupersolutionSpec:
    """``increasingTime``: ``exp(rate t)``; ``heatKernel``: Gaussian from ``(x0, t0)``;
    ``product``: product of ``components``."""

    kind: str
    rate: float = 1.0
    t0: float = 0.0
    x0: Optional[tuple[float, ...]] = None
    components: tuple = ()

    def __post_init__(self):
        if self.kind not in ("increasingTime", "heatKernel", "product"):
            raise ValueError(f"unknown supersolution kind {self.kind!r}")
        if self.kind == "increasingTime" and not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.kind == "product" and not self.components:
            raise ValueError("product needs components")


def supersolution(s: SupersolutionSpec, grid: GridSpec, exps: Exponents) -> GridFunction:
    mesh = grid.mesh()
    if s.kind == "increasingTime":
        vals = np.exp(s.rate * mesh[-1])
    elif s.kind == "heatKernel":
        if exps.p != 2:
            raise ValueError("the heat kernel is a solution only for p = 2")
        if grid.domain.t0 < s.t0 + HEAT_MARGIN_CELLS * grid.dt - 1e-12:
            raise ValueError(f"domain must start {HEAT_MARGIN_CELLS} time cells after the source time {s.t0}")
        x0 = (0.0,) * grid.n if s.x0 is None else s.x0
        tau = mesh[-1] - s.t0
        r2 = sum((m - c) ** 2 for m, c in zip(mesh[:-1], x0))
        vals = (4 * np.pi * tau) ** (-grid.n / 2) * np.exp(-r2 / (4 * tau))
    else:
        vals = np.ones(grid.shape)
        for c in s.components:
            vals = vals * supersolution(c, grid, exps).values
    if np.any(vals <= 0):
        raise GridError("supersolution underflowed to zero on the grid")
    return GridFunction(grid, vals)


def heat_residual(v: GridFunction) -> float:
    """Max interior ``|d_t v - Laplace v|`` by centred differences."""
    spec = v.spec
    a = v.values
    inner = tuple(slice(1, -1) for _ in a.shape)
    res = (a[inner[:-1] + (slice(2, None),)] - a[inner[:-1] + (slice(None, -2),)]) / (2 * spec.dt)
    for ax, h in enumerate(spec.spacing):
        up = list(inner)
        dn = list(inner)
        up[ax] = slice(2, None)
        dn[ax] = slice(None, -2)
        res = res - (a[tuple(up)] - 2 * a[inner] + a[tuple(dn)]) / h**2
    return float(np.max(np.abs(res)))


def weak_pairing(v: GridFunction, phi: GridFunction, p: float) -> float:
    """``sum(|grad v|^{p-2} grad v . grad phi - |v|^{p-2} v d_t phi) * cell volume``."""
    spec = v.spec
    steps = list(spec.spacing) + [spec.dt]
    gv = np.gradient(v.values, *steps)
    gp = np.gradient(phi.values, *steps)
    grad_sq = sum(g**2 for g in gv[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        flux = np.where(grad_sq > 0, grad_sq ** ((p - 2) / 2), 0.0)
    term = flux * sum(a * b for a, b in zip(gv[:-1], gp[:-1])) - np.abs(v.values) ** (p - 2) * v.values * gp[-1]
    return float(np.sum(term)) * spec.cell_volume


# -- representation pipeline ------------------------------------------------


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Representation:
    b: GridFunction
    mu: Optional[MeasureSpec]
    nu: Optional[MeasureSpec]
    alpha: float
    beta: float
    mask: np.ndarray
    eps: float
    residual: float
    b_min: float
    b_max: float
    stages: dict = field(default_factory=dict)

    @property
    def b_ratio(self) -> float:
        return self.b_max / self.b_min

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "eps": self.eps,
            "residual": self.residual,
            "bMin": self.b_min,
            "bMax": self.b_max,
            "bRatio": self.b_ratio,
            "validPoints": int(self.mask.sum()),
            "stages": self.stages,
        }


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise PipelineError(name, exc) from exc


def supersolution_representation(
    v: GridFunction,
    exps: Exponents,
    scales: Sequence[float],
    family: Optional[RectangleFamily] = None,
    eps_grid: Sequence[float] = (1.0, 0.5, 0.25, 0.125),
    a2_bound: float = 4.0,
    cr_eps: float = 0.5,
    tol: float = 1e-10,
    seed: int = 0,
) -> Representation:
    """``v = b (M^{gamma-} nu)^alpha / (M^{gamma+} mu)^beta`` with ``b`` a quotient.

    Stages: ``u = -log v``; ``w = exp(-eps u) = v^eps`` with the largest
    ``eps`` whose A_2^+ constant is at most ``a2_bound``; ``w = U V^{-1}`` by
    factorization; ``U = K_U (M^- nu)^{d_U}`` and ``V = K_V (M^+ mu)^{d_V}``;
    then ``alpha = d_U / eps`` and ``beta = d_V / eps``.
    """
    if np.any(v.values <= 0):
        raise PipelineError("input", GridError("v must be positive"))
    spec = v.spec
    u = _stage("log", weight_to_bmo, v, 1.0)
    if np.ptp(u.values) == 0:
        b = GridFunction.constant(spec, float(v.values.flat[0]))
        mask = np.ones(spec.shape, dtype=bool)
        return Representation(b, None, None, 0.0, 0.0, mask, 1.0, 0.0, float(b.values.min()), float(b.values.max()), {"degenerate": True})
    exps2 = exps.with_(q=2.0)
    if family is None:
        family = _stage("family", enumerate_family, spec, exps.p, max(1, len(scales)), 0.5, min(scales))
    scan = []
    eps = None
    for e in sorted(eps_grid, reverse=True):
        w = _stage("weight", bmo_to_weight, u, e)
        c = _stage("weight", aq_constant, w, exps2, "+", family).constant
        scan.append({"eps": e, "a2": c})
        if c <= a2_bound:
            eps = e
            break
    if eps is None:
        raise PipelineError("weight", ValueError(f"no eps in {list(eps_grid)} gives an A_2 constant <= {a2_bound}"))
    fac = _stage("factorize", factorize, w, exps2, scales, tol=tol, seed=seed)
    dec_u = _stage("decompose-u", cr_decompose, fac.u_extended, exps, cr_eps, scales, "+")
    dec_v = _stage("decompose-v", cr_decompose, fac.v_extended, exps, cr_eps, scales, "-")
    alpha, beta = dec_u.delta / eps, dec_v.delta / eps
    nu, mu = dec_u.measure, dec_v.measure
    m_nu = _stage("reconstruct", maximal_of_measure, nu, exps, "-", scales)
    m_mu = _stage("reconstruct", maximal_of_measure, mu, exps, "+", scales)
    mask = fac.mask & dec_u.mask & dec_v.mask & m_nu.mask & m_mu.mask
    if not mask.any():
        raise PipelineError("reconstruct", GridError("empty common validity mask"))
    safe_nu = np.where(mask, m_nu.values, 1.0)
    safe_mu = np.where(mask, m_mu.values, 1.0)
    rhs = safe_nu**alpha / safe_mu**beta
    b_vals = extend_nearest(np.where(mask, v.values / rhs, 0.0), mask)
    b = GridFunction(spec, b_vals)
    recon = b.values * rhs
    residual = float(np.max(np.abs(recon[mask] - v.values[mask]) / v.values[mask]))
    bv = b_vals[mask]
    stages = {
        "epsScan": scan,
        "factorization": fac.as_dict(),
        "decomposeU": dec_u.as_dict(),
        "decomposeV": dec_v.as_dict(),
    }
    return Representation(b, mu, nu, alpha, beta, mask, eps, residual, float(bv.min()), float(bv.max()), stages)
