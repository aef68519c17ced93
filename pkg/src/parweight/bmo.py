"""Parabolic BMO: seminorm with optimal offsets, John-Nirenberg fits, weight bridge.

For a rectangle ``R`` with halves of ``N`` cells each, the objective

    F(a) = avg_{R^+} (u - a)^+ + avg_{R^-} (a - u)^+

is convex and piecewise linear with slope ``(#{merged values < a} - N) / N``
over the ``2N`` merged half values.  Any ``a`` between the ``N``-th and
``(N+1)``-th smallest merged value is optimal; the lower one is used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import Exponents, ParabolicRectangle, RectangleFamily, lagged_halves, round_half_up
from .gridfn import GridFunction, GridError, mean_windows

# Largest number of gathered half values held in memory at once.
CHUNK_ELEMENTS = 1 << 22
EXP_LIMIT = 700.0


class FitRefused(ValueError):
    """Too few positive level-set measures for an exponential fit."""


def _gather(values: np.ndarray, starts, stops) -> np.ndarray:
    """Cell values of every window, shape ``(windows..., cells)``."""
    widths = tuple(int(np.asarray(e - s).flat[0]) for s, e in zip(starts, stops))
    view = sliding_window_view(values, widths)
    g = view[np.ix_(*[np.asarray(s) for s in starts])]
    lead = tuple(len(s) for s in starts)
    return g.reshape(lead + (-1,))


def _chunks(starts, stops, count_per_window: int):
    """Split along the time-centre axis so gathers stay below the memory cap."""
    n_t = len(starts[-1])
    per_t = max(1, math.prod(len(s) for s in starts[:-1]) * count_per_window)
    step = max(1, CHUNK_ELEMENTS // per_t)
    for i in range(0, n_t, step):
        sl = slice(i, min(n_t, i + step))
        yield sl, list(starts[:-1]) + [starts[-1][sl]], list(stops[:-1]) + [stops[-1][sl]]


def _split(lv, exps: Exponents, spec, direction: str):
    """Windows of the half where positive excess counts, and of the other half."""
    hw_plus = lv.half_windows(exps.gamma, spec, exps.p, "+")
    hw_minus = lv.half_windows(exps.gamma, spec, exps.p, "-")
    if hw_plus is None:
        return None
    return (hw_plus, hw_minus) if direction == "+" else (hw_minus, hw_plus)


@dataclass
class BmoReport:
    seminorm: float
    witness: Optional[ParabolicRectangle]
    gamma: float
    direction: str
    provenance: dict
    per_level: list = field(default_factory=list, repr=False)
    offsets: list = field(default_factory=list, repr=False)
    canonical_offsets: list = field(default_factory=list, repr=False)
    witness_index: Optional[tuple] = None

    @property
    def witness_offset(self) -> Optional[float]:
        if self.witness_index is None:
            return None
        li, idx = self.witness_index
        return float(self.offsets[li][idx])

    def as_dict(self) -> dict:
        return {
            "seminorm": self.seminorm,
            "witness": None if self.witness is None else self.witness.as_dict(),
            "witnessOffset": self.witness_offset,
            "gamma": self.gamma,
            "direction": self.direction,
            "family": self.provenance,
        }


def _log_mean_exp(x: np.ndarray) -> np.ndarray:
    top = np.max(x, axis=-1, keepdims=True)
    return (top + np.log(np.mean(np.exp(x - top), axis=-1, keepdims=True)))[..., 0]


def _objective(excess_vals, deficit_vals, a):
    a = a[..., None]
    return np.mean(np.maximum(excess_vals - a, 0.0), axis=-1) + np.mean(np.maximum(a - deficit_vals, 0.0), axis=-1)


def pbmo_seminorm(u: GridFunction, exps: Exponents, family: RectangleFamily, direction: str = "+") -> BmoReport:
    """``sup_R min_a [avg_{R^+}(u-a)^+ + avg_{R^-}(a-u)^+]`` (halves swap for ``-``).

    Also records the canonical offsets ``-log avg_{R^-} e^{-u}`` (past half
    of the direction), which are feasible but not necessarily optimal.
    """
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    vals, offs, canon = [], [], []
    for lv in family.levels:
        split = _split(lv, exps, family.spec, direction)
        if split is None:
            vals.append(None)
            offs.append(None)
            canon.append(None)
            continue
        (es, ee), (ds, de) = split
        N = math.prod(int(np.asarray(b - a).flat[0]) for a, b in zip(es, ee))
        shape = lv.grid_shape
        v, o, c = np.empty(shape), np.empty(shape), np.empty(shape)
        for (sl, s1, e1), (_, s2, e2) in zip(_chunks(es, ee, 2 * N), _chunks(ds, de, 2 * N)):
            ex = _gather(u.values, s1, e1)
            de_ = _gather(u.values, s2, e2)
            merged = np.concatenate([ex, de_], axis=-1)
            a = np.partition(merged, N - 1, axis=-1)[..., N - 1]
            v[..., sl] = _objective(ex, de_, a)
            o[..., sl] = a
            c[..., sl] = -_log_mean_exp(-de_)
        vals.append(v)
        offs.append(o)
        canon.append(c)
    best, where = -math.inf, None
    for li, v in enumerate(vals):
        if v is None:
            continue
        flat = int(np.argmax(v))
        if v.flat[flat] > best:
            best, where = float(v.flat[flat]), (li, tuple(int(i) for i in np.unravel_index(flat, v.shape)))
    if where is None:
        raise GridError("no family rectangle survives the lag at any scale")
    return BmoReport(
        best,
        family.rectangle(*where),
        exps.gamma,
        direction,
        family.provenance_dict(),
        vals,
        offs,
        canon,
        where,
    )


def pbmo_objective(
    u: GridFunction, exps: Exponents, family: RectangleFamily, offsets: Sequence, direction: str = "+"
) -> list:
    """Per-rectangle objective at given offsets (one array per level, ``None`` if skipped)."""
    out = []
    for lv, off in zip(family.levels, offsets):
        split = _split(lv, exps, family.spec, direction)
        if split is None or off is None:
            out.append(None)
            continue
        (es, ee), (ds, de) = split
        N = math.prod(int(np.asarray(b - a).flat[0]) for a, b in zip(es, ee))
        res = np.empty(lv.grid_shape)
        off = np.broadcast_to(np.asarray(off, dtype=float), lv.grid_shape)
        for (sl, s1, e1), (_, s2, e2) in zip(_chunks(es, ee, 2 * N), _chunks(ds, de, 2 * N)):
            res[..., sl] = _objective(_gather(u.values, s1, e1), _gather(u.values, s2, e2), off[..., sl])
        out.append(res)
    return out


def bridge_offsets(w: GridFunction, exps: Exponents, family: RectangleFamily) -> list:
    """Feasible offsets ``-log avg_{R^-} w`` for ``u = -log w`` (one array per level)."""
    out = []
    for lv in family.levels:
        hw = lv.half_windows(exps.gamma, family.spec, exps.p, "-")
        out.append(None if hw is None else -np.log(mean_windows(w, 1.0, *hw)))
    return out


# -- John-Nirenberg decay ---------------------------------------------------


@dataclass(frozen=True)
class JNFit:
    A: float
    B: float
    quality: float
    side: Optional[str]
    degenerate: bool = False
    sides: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "fitQuality": self.quality, "side": self.side, "degenerate": self.degenerate}


def rectangle_cells(spec, R: ParabolicRectangle, gamma: float, p: float):
    """Cell ranges ``{half: (start, stop)}`` of both lagged halves, snapped and clipped."""
    d = spec.domain
    out = {}
    for half, box in zip("-+", lagged_halves(R, gamma, p)):
        start, stop = [], []
        for a, h in enumerate(spec.spacing):
            start.append(round_half_up((box.lo[a] - d.lo[a]) / h))
            stop.append(round_half_up((box.hi[a] - d.lo[a]) / h))
        start.append(round_half_up((box.t0 - d.t0) / spec.dt))
        stop.append(round_half_up((box.t1 - d.t0) / spec.dt))
        start = tuple(min(max(0, s), n) for s, n in zip(start, spec.shape))
        stop = tuple(min(max(0, s), n) for s, n in zip(stop, spec.shape))
        if any(b <= a for a, b in zip(start, stop)):
            raise GridError(f"half {half} of {R} snaps to an empty cell range")
        out[half] = (start, stop)
    return out


def family_cells(family: RectangleFamily, level: int, index, gamma: float):
    lv = family.levels[level]
    out = {}
    for half in "-+":
        hw = lv.half_windows(gamma, family.spec, family.p, half)
        if hw is None:
            raise GridError("lag swallows the half at this scale")
        out[half] = (tuple(int(s[i]) for s, i in zip(hw[0], index)), tuple(int(s[i]) for s, i in zip(hw[1], index)))
    return out


def _side_fit(d: np.ndarray, full_cells: int, lambda_grid, min_points: int):
    grid = np.linspace(0.0, float(np.percentile(d, 99)), 16) if lambda_grid is None else np.asarray(lambda_grid, float)
    counts = np.array([np.count_nonzero(d > lam) for lam in grid])
    pos = counts > 0
    if not pos.any():
        return None
    lam = grid[pos]
    distinct = np.unique(counts[pos]).size
    if distinct < min_points:
        raise FitRefused(f"only {distinct} distinct positive level-set measures, need {min_points}")
    y = np.log(counts[pos] / full_cells)
    slope, icpt = np.polyfit(lam, y, 1)
    resid = y - (slope * lam + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return {"A": float(np.exp(icpt)), "B": float(-slope), "quality": r2, "lambdas": grid, "counts": counts}


def jn_decay_fit(
    u: GridFunction,
    exps: Exponents,
    R,
    a: float,
    lambda_grid=None,
    min_points: int = 4,
) -> JNFit:
    """Fit ``|R^+ & {(u-a)^+ > lam}| / |R| ~ A e^{-B lam}`` and the mirrored ``R^-`` side.

    ``R`` is a :class:`ParabolicRectangle` or a precomputed cell map as
    returned by :func:`family_cells`.  The weaker side (smaller ``B``) is
    returned.  A side whose level-set measure takes fewer than
    ``min_points`` distinct positive values carries no decay information and
    is left out; if both sides are left out the fit is refused.  When no
    level set at positive height is populated on either side the decay is
    trivially exact and a degenerate fit is returned.
    """
    cells = R if isinstance(R, dict) else rectangle_cells(u.spec, R, exps.gamma, exps.p)
    (p0, p1), (m0, m1) = cells["+"], cells["-"]
    plus = u.values[tuple(slice(s, e) for s, e in zip(p0, p1))]
    minus = u.values[tuple(slice(s, e) for s, e in zip(m0, m1))]
    # |R| in cells: spatial footprint times the full time extent.
    full = math.prod(e - s for s, e in zip(p0[:-1], p1[:-1])) * (p1[-1] - m0[-1])
    fits, refused = {}, {}
    for side, d in (("+", np.maximum(plus - a, 0.0)), ("-", np.maximum(a - minus, 0.0))):
        try:
            fits[side] = _side_fit(d.ravel(), full, lambda_grid, min_points)
        except FitRefused as exc:
            fits[side], refused[side] = None, str(exc)
    live = {k: v for k, v in fits.items() if v is not None}
    if not live:
        if refused:
            raise FitRefused("; ".join(f"side {k}: {v}" for k, v in refused.items()))
        return JNFit(0.0, math.inf, 1.0, None, True, fits)
    side = min(live, key=lambda k: live[k]["B"])
    f = live[side]
    return JNFit(f["A"], f["B"], f["quality"], side, False, fits)


# -- bridge between weights and BMO -----------------------------------------


def bmo_to_weight(u: GridFunction, eps: float) -> GridFunction:
    """``exp(-eps u)``; refuses exponents that would overflow."""
    x = -eps * u.values
    if np.max(np.abs(x)) > EXP_LIMIT:
        raise OverflowError(f"exp of {np.max(np.abs(x)):.3g} leaves floating range")
    return GridFunction(u.spec, np.exp(x))


def weight_to_bmo(w: GridFunction, scale: float) -> GridFunction:
    """``-scale log w``."""
    if np.any(w.values <= 0):
        raise GridError("logarithm of a nonpositive weight")
    return GridFunction(w.spec, -scale * np.log(w.values))
