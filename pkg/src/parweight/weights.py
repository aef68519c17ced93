"""Estimators for the one-sided parabolic weight classes.

Every supremum runs over a finite :class:`RectangleFamily` (or over the
valid grid points of a maximal function) and reports the maximizing
rectangle or point, so a large constant can be traced back to its source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Exponents, ParabolicRectangle, RectangleFamily
from .gridfn import GridFunction, GridError, mean_windows, power_transform
from .maximal import box_minima, maximal_backward, maximal_forward

STABLE_CHANGE = 0.05
DIVERGENCE_FACTOR = 2.0


class NumericalError(ArithmeticError):
    """An estimate could not be formed in floating point."""


@dataclass
class WeightReport:
    kind: str
    constant: float
    witness: object
    params: dict
    provenance: dict = field(default_factory=dict)
    witness_cells: Optional[dict] = None
    per_level: list = field(default_factory=list, repr=False)
    history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        wit = self.witness.as_dict() if hasattr(self.witness, "as_dict") else self.witness
        return {
            "kind": self.kind,
            "constant": self.constant,
            "witness": wit,
            "parameters": self.params,
            "family": self.provenance,
            "refinementHistory": list(self.history),
        }


def verdict(base: float, refined: float, extended: Optional[float] = None) -> str:
    """``diverging`` on 2x growth under refinement or domain extension,
    ``stable`` on a change below 5% under refinement, else ``unresolved``."""
    grown = [v for v in (refined, extended) if v is not None]
    if any(not math.isfinite(v) or (v > base and v >= DIVERGENCE_FACTOR * base) for v in grown):
        return "diverging"
    if abs(refined - base) <= STABLE_CHANGE * abs(base):
        return "stable"
    return "unresolved"


def _family_sup(family: RectangleFamily, per_level, kind, params, gamma, halves_gamma=None) -> WeightReport:
    best, where = -math.inf, None
    for li, vals in enumerate(per_level):
        if vals is None or vals.size == 0:
            continue
        flat = int(np.argmax(vals))
        v = float(vals.flat[flat])
        if v > best:
            best, where = v, (li, tuple(int(i) for i in np.unravel_index(flat, vals.shape)))
    if where is None:
        raise GridError("no family rectangle survives the lag at any scale")
    li, idx = where
    lv = family.levels[li]
    g = gamma if halves_gamma is None else halves_gamma
    cells = {}
    for half in "-+":
        starts, stops = lv.half_windows(g, family.spec, family.p, half)
        cells[half] = (
            tuple(int(s[i]) for s, i in zip(starts, idx)),
            tuple(int(s[i]) for s, i in zip(stops, idx)),
        )
    return WeightReport(
        kind, best, family.rectangle(li, idx), params, family.provenance_dict(), cells, list(per_level)
    )


def _halves(family: RectangleFamily, li: int, gamma: float):
    lv = family.levels[li]
    minus = lv.half_windows(gamma, family.spec, family.p, "-")
    plus = lv.half_windows(gamma, family.spec, family.p, "+")
    return minus, plus


def aq_values(w: GridFunction, exps: Exponents, family: RectangleFamily, direction: str = "+") -> list:
    """Per-rectangle A_q products, one array per family level (``None`` if skipped)."""
    if direction not in "+-" or len(direction) != 1:
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    if np.any(w.values <= 0):
        raise GridError("weights must be strictly positive")
    e = exps.dual_exponent
    out = []
    for li in range(len(family.levels)):
        minus, plus = _halves(family, li, exps.gamma)
        if minus is None:
            out.append(None)
            continue
        past, future = (minus, plus) if direction == "+" else (plus, minus)
        a = mean_windows(w, 1.0, *past)
        b = mean_windows(w, e, *future)
        out.append(a * b ** (exps.q - 1))
    return out


def aq_constant(w: GridFunction, exps: Exponents, direction: str, family: RectangleFamily) -> WeightReport:
    """``sup_R (avg_{R^-} w)(avg_{R^+} w^{1-q'})^{q-1}``; halves swap for ``-``."""
    vals = aq_values(w, exps, family, direction)
    params = {**exps.as_dict(), "direction": direction}
    return _family_sup(family, vals, f"A_q{direction}", params, exps.gamma)


def a1_ratio(w: GridFunction, exps: Exponents, direction: str, scales, **kw):
    """Pointwise ``M w / w`` with its validity mask (backward maximal for ``+``)."""
    if np.any(w.values <= 0):
        raise GridError("weights must be strictly positive")
    op = maximal_backward if direction == "+" else maximal_forward
    res = op(w, exps, scales, **kw)
    return res.values / w.values, res.mask


def a1_constant(
    w: GridFunction,
    exps: Exponents,
    direction: str,
    scales,
    region: Optional[np.ndarray] = None,
    **kw,
) -> WeightReport:
    """Sup over valid points of ``M^{gamma-} w / w`` (``+``) or ``M^{gamma+} w / w`` (``-``)."""
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    ratio, mask = a1_ratio(w, exps, direction, scales, **kw)
    if region is not None:
        mask = mask & region
    if not mask.any():
        raise GridError("validity mask is empty")
    r = np.where(mask, ratio, -np.inf)
    idx = np.unravel_index(int(np.argmax(r)), r.shape)
    point = w.spec.point(idx)
    params = {**exps.as_dict(), "direction": direction}
    prov = {"scales": [float(s) for s in scales], "validPoints": int(mask.sum())}
    return WeightReport(f"A_1{direction}", float(r[idx]), {"index": [int(i) for i in idx], "point": list(point)}, params, prov)


def a1_forward_comparison(w: GridFunction, exps: Exponents, family: RectangleFamily) -> WeightReport:
    """Sup over the family of ``avg_{R^-(g)} w / inf_{R^+(g)} w`` with ``g = 2^{p-1} gamma``."""
    if exps.gamma >= 2.0 ** (1 - exps.p):
        raise ValueError(f"gamma={exps.gamma} must be below 2^(1-p)={2.0 ** (1 - exps.p)}")
    g = 2.0 ** (exps.p - 1) * exps.gamma
    vals = []
    for li in range(len(family.levels)):
        minus, plus = _halves(family, li, g)
        if minus is None:
            vals.append(None)
            continue
        vals.append(mean_windows(w, 1.0, *minus) / box_minima(w.values, *plus))
    params = {**exps.as_dict(), "comparisonLag": g}
    return _family_sup(family, vals, "A_1+ comparison", params, exps.gamma, halves_gamma=g)


def reverse_holder(w: GridFunction, exps: Exponents, delta: float, family: RectangleFamily) -> WeightReport:
    """Sup of ``(avg_{R^-(0)} w^{1+delta})^{1/(1+delta)} / avg_{R^+(0)} w``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    top = np.max(w.values)
    with np.errstate(over="ignore"):
        if not math.isfinite(top ** (1 + delta)) or not math.isfinite(float(np.sum(w.values ** (1 + delta)))):
            raise NumericalError(f"w^(1+delta) overflows for delta={delta}")
    vals = []
    for li in range(len(family.levels)):
        minus, plus = _halves(family, li, 0.0)
        vals.append(mean_windows(w, 1 + delta, *minus) ** (1 / (1 + delta)) / mean_windows(w, 1.0, *plus))
    params = {**exps.as_dict(), "delta": delta}
    return _family_sup(family, vals, "reverse Holder", params, 0.0)


def self_improvement_scan(
    w: GridFunction, exps: Exponents, family: RectangleFamily, eps_grid: Sequence[float], threshold: float = math.inf
):
    """A_{q-eps} constants for each ``eps``; returns ``(rows, smallest finite index)``.

    A row is ``(index, constant)``.  An index counts as finite when its
    constant is finite and at most ``threshold``.
    """
    rows = []
    for eps in sorted(eps_grid):
        qq = exps.q - eps
        if qq <= 1:
            raise ValueError(f"q - eps = {qq} must stay above 1")
        rows.append((qq, aq_constant(w, exps.with_(q=qq), "+", family).constant))
    finite = [qq for qq, c in rows if math.isfinite(c) and c <= threshold]
    return rows, (min(finite) if finite else None)


def dual_weight(w: GridFunction, exps: Exponents) -> GridFunction:
    """``sigma = w^{1-q'}``."""
    return power_transform(w, exps.dual_exponent)


def _fsum(a: np.ndarray) -> float:
    return math.fsum(np.ravel(a).tolist())


def _weak_setup(w: GridFunction, f: GridFunction, exps: Exponents, scales, **kw):
    if w.spec != f.spec:
        raise GridError("weight and function live on different grids")
    res = maximal_forward(f, exps, scales, **kw)
    M = np.where(res.mask, res.values, 0.0)
    denom = _fsum(np.abs(f.values) ** exps.q * w.values)
    return M, res.mask, denom


def default_lambda_grid(M: np.ndarray, mask: np.ndarray, count: int = 32) -> np.ndarray:
    """Geometric grid from the smallest positive to the largest valid value."""
    pos = M[mask & (M > 0)]
    if pos.size == 0:
        return np.zeros(0)
    lo, hi = float(pos.min()), float(pos.max())
    if lo == hi:
        return np.array([lo])
    return np.geomspace(lo, hi, count)


def weak_type_profile(w, f, exps: Exponents, scales, lambda_grid=None, **kw):
    """``(lambdas, ratios)`` with ratio ``lam^q w({Mf > lam} & valid) / int |f|^q w``."""
    M, mask, denom = _weak_setup(w, f, exps, scales, **kw)
    lams = default_lambda_grid(M, mask) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    nums = [lam**exps.q * _fsum(np.where(mask & (M > lam), w.values, 0.0)) for lam in lams]
    if all(n == 0 for n in nums):
        return lams, np.zeros(len(lams))
    if denom == 0:
        raise ZeroDivisionError("integral of |f|^q w vanishes")
    return lams, np.array(nums) / denom


def weak_type_ratio(w, f, exps: Exponents, scales, lambda_grid=None, **kw) -> float:
    """Sup over ``lam`` of the weak-type ratio.

    Without ``lambda_grid`` the sup is exact: ``lam^q w({Mf > lam})`` is
    largest as ``lam`` rises to a value taken by ``Mf``, so it is evaluated
    at every such value with the level set taken inclusively.
    """
    if lambda_grid is not None:
        _, ratios = weak_type_profile(w, f, exps, scales, lambda_grid, **kw)
        return float(ratios.max()) if ratios.size else 0.0
    M, mask, denom = _weak_setup(w, f, exps, scales, **kw)
    keep = mask & (M > 0)
    if not keep.any():
        return 0.0
    if denom == 0:
        raise ZeroDivisionError("integral of |f|^q w vanishes")
    m, wv = M[keep], w.values[keep]
    order = np.argsort(-m, kind="stable")
    m, cum = m[order], np.cumsum(wv[order])
    # last index of each run of equal values, so ties are counted together
    last = np.r_[m[1:] != m[:-1], True]
    return float(np.max(m[last] ** exps.q * cum[last])) / denom


def strong_type_integral_ratio(w, f, exps: Exponents, scales, **kw) -> float:
    """``int_valid (Mf)^q w / int |f|^q w`` (the q-th power of the strong ratio)."""
    M, mask, denom = _weak_setup(w, f, exps, scales, **kw)
    num = _fsum(np.where(mask, M**exps.q * w.values, 0.0))
    if num == 0:
        return 0.0
    if denom == 0:
        raise ZeroDivisionError("integral of |f|^q w vanishes")
    return num / denom


def strong_type_ratio(w, f, exps: Exponents, scales, **kw) -> float:
    return strong_type_integral_ratio(w, f, exps, scales, **kw) ** (1 / exps.q)


def time_shift_ratio(w: GridFunction, exps: Exponents, family: RectangleFamily, shift: float) -> float:
    """Sup of ``avg_{R^-} w / avg_{shift + R^-} w`` over rectangles whose shifted half fits."""
    cells = max(1, int(round(shift / w.spec.dt)))
    best = 0.0
    for li in range(len(family.levels)):
        minus, _ = _halves(family, li, exps.gamma)
        if minus is None:
            continue
        starts, stops = list(minus[0]), list(minus[1])
        keep = stops[-1] + cells <= w.spec.time_cells
        if not keep.any():
            continue
        starts[-1], stops[-1] = starts[-1][keep], stops[-1][keep]
        here = mean_windows(w, 1.0, starts, stops)
        starts[-1], stops[-1] = starts[-1] + cells, stops[-1] + cells
        best = max(best, float(np.max(here / mean_windows(w, 1.0, starts, stops))))
    return best


def measure_comparison(
    w: GridFunction, exps: Exponents, report: WeightReport, rng: np.random.Generator, count: int = 20
) -> list[tuple[float, float]]:
    """Pairs ``(w(R^-), C (|R^-|/|S|)^q w(S))`` for random cell boxes ``S`` inside ``R^+``.

    ``R`` is the witness rectangle of ``report`` and ``C`` its constant.
    """
    (m0, m1), (p0, p1) = report.witness_cells["-"], report.witness_cells["+"]
    tab = w.table(1.0)
    vol = w.spec.cell_volume
    w_minus = tab.box_sum(m0, m1) * vol
    size_minus = math.prod(b - a for a, b in zip(m0, m1))
    out = []
    for _ in range(count):
        lo, hi = [], []
        for a, b in zip(p0, p1):
            i, j = sorted(rng.integers(a, b + 1, size=2))
            if i == j:
                i, j = (i - 1, j) if j > a else (i, j + 1)
            lo.append(int(i))
            hi.append(int(j))
        size_s = math.prod(b - a for a, b in zip(lo, hi))
        rhs = report.constant * (size_minus / size_s) ** exps.q * tab.box_sum(lo, hi) * vol
        out.append((w_minus, rhs))
    return out
