"""Lagged forward/backward parabolic maximal operators on grids.

The forward operator at a cell centre ``(x, t)`` is the largest average of
``|f|`` over the upper halves ``R^+(gamma)`` of the rectangles centred there,
over a finite list of side lengths.  Half boundaries snap to the nearest cell
boundary; exact ties snap towards the centre cell, so at zero lag both halves
contain the centre cell.  Scales whose upper half does not fit the domain at
a point are ignored there; points without any admissible scale are masked.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import SNAP_TOL, Exponents, GridSpec, round_half_up
from .gridfn import GridFunction, reverse_time


class NoAdmissibleScaleError(ValueError):
    """No scale of the list fits anywhere on the grid."""


_WORKERS: Optional[int] = None


def set_default_workers(n: Optional[int]) -> None:
    """Process-wide worker count for the maximal operators (``None`` resets)."""
    global _WORKERS
    _WORKERS = None if n is None else max(1, int(n))


def default_workers() -> int:
    env = os.environ.get("PARWEIGHT_THREADS")
    if env:
        return max(1, int(env))
    return _WORKERS or 1


@dataclass(frozen=True)
class Offsets:
    """Cell offsets of the upper half ``R^+(gamma)`` relative to its centre cell."""

    k: tuple[int, ...]
    a: int
    b: int

    @property
    def spatial_shift(self) -> tuple[int, ...]:
        return tuple(-((kk - 1) // 2) for kk in self.k)

    @property
    def count(self) -> int:
        return math.prod(self.k) * (self.b - self.a)


def forward_offsets(spec: GridSpec, l: float, p: float, gamma: float) -> Optional[Offsets]:
    L = l**p
    k = tuple(max(1, round_half_up(l / h)) for h in spec.spacing)
    a = math.ceil(gamma * L / spec.dt - SNAP_TOL)
    b = math.ceil(L / spec.dt - SNAP_TOL)
    if b <= a:
        return None
    return Offsets(k, a, b)


def _anchor_windows(spec: GridSpec, off: Offsets, clip: bool = True):
    """Anchors (per axis) and their forward windows for one scale."""
    anchors, starts, stops = [], [], []
    for n_cells, kk, sh in zip(spec.cells, off.k, off.spatial_shift):
        idx = np.arange(-sh, n_cells - kk - sh + 1) if clip else np.arange(n_cells)
        anchors.append(idx)
        starts.append(idx + sh)
        stops.append(idx + sh + kk)
    idx = np.arange(0, spec.time_cells - off.b + 1) if clip else np.arange(spec.time_cells)
    anchors.append(idx)
    starts.append(idx + off.a)
    stops.append(idx + off.b)
    return anchors, starts, stops


@dataclass(frozen=True, eq=False)
class MaximalResult:
    output: GridFunction
    mask: np.ndarray
    argmax_scale: np.ndarray
    scales: tuple[float, ...]
    exps: Exponents
    direction: str
    provenance: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.output.values


def _forward_values(vals_fn: GridFunction, exps: Exponents, scales: Sequence[float], workers: int):
    spec = vals_fn.spec
    tab = vals_fn.table(1.0)

    def one(l):
        off = forward_offsets(spec, l, exps.p, exps.gamma)
        if off is None:
            return None
        anchors, starts, stops = _anchor_windows(spec, off)
        if any(len(a) == 0 for a in anchors):
            return None
        return anchors, tab.window_sums(starts, stops) / off.count

    if workers > 1 and len(scales) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, scales))
    else:
        parts = [one(l) for l in scales]

    out = np.zeros(spec.shape)
    best = np.full(spec.shape, -np.inf)
    arg = np.full(spec.shape, np.nan)
    for l, part in zip(scales, parts):
        if part is None:
            continue
        anchors, means = part
        sl = tuple(slice(int(a[0]), int(a[-1]) + 1) for a in anchors)
        better = means > best[sl]
        best[sl] = np.where(better, means, best[sl])
        arg[sl] = np.where(better, l, arg[sl])
    mask = np.isfinite(best)
    out[mask] = best[mask]
    return out, mask, arg


def maximal_forward(
    f: GridFunction,
    exps: Exponents,
    scales: Sequence[float],
    oracle: bool = False,
    workers: Optional[int] = None,
) -> MaximalResult:
    """Forward lagged maximal function ``M^{gamma+} f`` at every cell centre."""
    scales = tuple(float(s) for s in scales)
    g = f if np.all(f.values >= 0) else GridFunction(f.spec, np.abs(f.values))
    if oracle:
        out, mask, arg = _naive(g, exps, scales, "+")
    else:
        out, mask, arg = _forward_values(g, exps, scales, workers or default_workers())
    if not mask.any():
        raise NoAdmissibleScaleError(f"none of the scales {scales} fits the grid")
    prov = {"scales": list(scales), "p": exps.p, "gamma": exps.gamma, "oracle": oracle}
    return MaximalResult(GridFunction(f.spec, out), mask, arg, scales, exps, "+", prov)


def maximal_backward(
    f: GridFunction,
    exps: Exponents,
    scales: Sequence[float],
    oracle: bool = False,
    workers: Optional[int] = None,
) -> MaximalResult:
    """Backward operator, defined as the time reflection of the forward one."""
    res = maximal_forward(reverse_time(f), exps, scales, oracle=oracle, workers=workers)
    return MaximalResult(
        reverse_time(res.output),
        res.mask[..., ::-1].copy(),
        res.argmax_scale[..., ::-1].copy(),
        res.scales,
        exps,
        "-",
        res.provenance,
    )


def maximal(f: GridFunction, exps: Exponents, scales, direction: str = "+", **kw) -> MaximalResult:
    if direction == "+":
        return maximal_forward(f, exps, scales, **kw)
    if direction == "-":
        return maximal_backward(f, exps, scales, **kw)
    raise ValueError(f"direction must be '+' or '-', got {direction!r}")


def _naive(f: GridFunction, exps: Exponents, scales, direction: str, points=None):
    spec = f.spec
    vals = np.abs(f.values)
    shape = spec.shape
    pts = list(np.ndindex(*shape)) if points is None else [tuple(int(v) for v in p) for p in points]
    out = np.zeros(shape)
    best = np.full(shape, -np.inf)
    arg = np.full(shape, np.nan)
    offsets = [(l, forward_offsets(spec, l, exps.p, exps.gamma)) for l in scales]
    for pt in pts:
        for l, off in offsets:
            if off is None:
                continue
            lo = [i + s for i, s in zip(pt[:-1], off.spatial_shift)]
            hi = [a + kk for a, kk in zip(lo, off.k)]
            j = pt[-1]
            if direction == "+":
                t0, t1 = j + off.a, j + off.b
            else:
                t0, t1 = j + 1 - off.b, j + 1 - off.a
            if min(lo) < 0 or any(h > n for h, n in zip(hi, spec.cells)) or t0 < 0 or t1 > spec.time_cells:
                continue
            sl = tuple(slice(a, b) for a, b in zip(lo, hi)) + (slice(t0, t1),)
            v = float(np.mean(vals[sl]))
            if v > best[pt]:
                best[pt] = v
                arg[pt] = l
    mask = np.isfinite(best)
    out[mask] = best[mask]
    return out, mask, arg


def maximal_naive(f: GridFunction, exps: Exponents, scales, direction: str = "+", points=None):
    """Direct per-point evaluation (no prefix tables), optionally at ``points`` only.

    Returns ``(values, mask)``; unevaluated points are masked out.
    """
    out, mask, _ = _naive(f, exps, tuple(scales), direction, points)
    return out, mask


def extend_nearest(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked-out cells with the value of the nearest valid cell."""
    if mask.all():
        return values.copy()
    if not mask.any():
        raise ValueError("no valid cell to extend from")
    idx = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
    return values[tuple(idx)]


def sliding_min(x: np.ndarray, width: int, axis: int) -> np.ndarray:
    """``out[i] = min(x[i:i+width])`` along ``axis`` (sparse-table doubling)."""
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    if not 1 <= width <= n:
        raise ValueError(f"window width {width} outside [1, {n}]")
    cur, span = x, 1
    while 2 * span <= width:
        cur = np.minimum(cur[:-span], cur[span:])
        span *= 2
    count = n - width + 1
    out = np.minimum(cur[:count], cur[width - span : width - span + count])
    return np.moveaxis(out, 0, axis)


def box_minima(values: np.ndarray, starts, stops) -> np.ndarray:
    """Minimum over the outer product of equal-width windows per axis."""
    cur = values
    for axis, (s, e) in enumerate(zip(starts, stops)):
        width = int(np.asarray(e - s).flat[0])
        cur = sliding_min(cur, width, axis)
    return cur[np.ix_(*[np.asarray(s) for s in starts])]
