"""Piecewise-constant functions on a space-time grid and their box averages.

Each cell carries the function value at its centre.  Box sums come from
prefix (summed-area) tables kept in double-double arithmetic: every entry is
an unevaluated pair ``hi + lo`` of float64 numbers, so that differences of
large prefix sums keep full relative accuracy for small boxes.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import GridSpec, SpaceTimeBox, round_half_up

log = logging.getLogger(__name__)

FLOOR_EPS = 1e-12


class GridError(ValueError):
    pass


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _dd_cumsum(hi: np.ndarray, lo: np.ndarray, axis: int):
    hi = np.moveaxis(hi, axis, 0)
    lo = np.moveaxis(lo, axis, 0)
    out_hi = np.empty_like(hi)
    out_lo = np.empty_like(lo)
    s_hi = np.zeros(hi.shape[1:])
    s_lo = np.zeros(hi.shape[1:])
    for k in range(hi.shape[0]):
        s_hi, e = _two_sum(s_hi, hi[k])
        s_lo = s_lo + (e + lo[k])
        s_hi, s_lo = _fast_two_sum(s_hi, s_lo)
        out_hi[k] = s_hi
        out_lo[k] = s_lo
    return np.moveaxis(out_hi, 0, axis), np.moveaxis(out_lo, 0, axis)


class PrefixTable:
    """Zero-padded cumulative sums of ``values**exponent`` over every axis."""

    def __init__(self, values: np.ndarray, exponent: float = 1.0):
        self.exponent = float(exponent)
        src = values if self.exponent == 1.0 else np.power(values, self.exponent)
        if not np.all(np.isfinite(src)):
            raise GridError(f"non-finite values after raising to power {exponent}")
        hi = np.zeros(tuple(s + 1 for s in src.shape))
        hi[tuple(slice(1, None) for _ in src.shape)] = src
        lo = np.zeros_like(hi)
        for axis in range(src.ndim):
            hi, lo = _dd_cumsum(hi, lo, axis)
        self.hi = hi
        self.lo = lo
        self.hi.flags.writeable = False
        self.lo.flags.writeable = False

    @property
    def ndim(self) -> int:
        return self.hi.ndim

    def window_sums(self, starts: Sequence[np.ndarray], stops: Sequence[np.ndarray]) -> np.ndarray:
        """Sums over the outer product of per-axis cell windows.

        ``starts[a]`` and ``stops[a]`` are integer arrays (inclusive start,
        exclusive stop) along axis ``a``; the result has shape
        ``tuple(len(s) for s in starts)``.  Indices are clipped to the grid,
        so windows reaching outside only sum their in-grid part.
        """
        shape = [len(s) for s in starts]
        limits = [n - 1 for n in self.hi.shape]
        starts = [np.clip(np.asarray(s, dtype=np.int64), 0, n) for s, n in zip(starts, limits)]
        stops = [np.clip(np.asarray(s, dtype=np.int64), 0, n) for s, n in zip(stops, limits)]
        acc_hi = np.zeros(shape)
        acc_lo = np.zeros(shape)
        for corner in itertools.product((0, 1), repeat=self.ndim):
            idx = np.ix_(*[stops[a] if c else starts[a] for a, c in enumerate(corner)])
            sign = -1.0 if (self.ndim - sum(corner)) % 2 else 1.0
            acc_hi, e = _two_sum(acc_hi, sign * self.hi[idx])
            acc_lo = acc_lo + (e + sign * self.lo[idx])
        return acc_hi + acc_lo

    def box_sum(self, start: Sequence[int], stop: Sequence[int]) -> float:
        return float(self.window_sums([[s] for s in start], [[s] for s in stop]).ravel()[0])


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Immutable grid samples with lazily built prefix tables per exponent."""

    spec: GridSpec
    values: np.ndarray
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != self.spec.shape:
            raise GridError(f"values shape {vals.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("grid values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, spec: GridSpec, fn) -> "GridFunction":
        """Sample ``fn(x_1, ..., x_n, t)`` at cell centres."""
        vals = np.broadcast_to(np.asarray(fn(*spec.mesh()), dtype=float), spec.shape)
        return cls(spec, vals)

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> "GridFunction":
        return cls(spec, np.full(spec.shape, float(c)))

    def table(self, exponent: float = 1.0) -> PrefixTable:
        key = float(exponent)
        tab = self._tables.get(key)
        if tab is None:
            if key < 0 and np.any(self.values <= 0):
                raise GridError("negative exponent needs strictly positive values")
            tab = self._tables[key] = PrefixTable(self.values, key)
        return tab

    def as_weight(self, floor: float = FLOOR_EPS) -> "GridFunction":
        """Clamp to ``floor`` so negative powers stay finite; warns when it bites."""
        low = self.values < floor
        if not np.any(low):
            return self
        log.warning("clamping %d grid values below %g", int(low.sum()), floor)
        return GridFunction(self.spec, np.maximum(self.values, floor))

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.spec, values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.spec, self.values * float(c))

    __rmul__ = __mul__

    def integral(self, exponent: float = 1.0, mask: Optional[np.ndarray] = None) -> float:
        v = self.values if exponent == 1.0 else np.power(self.values, exponent)
        if mask is not None:
            v = np.where(mask, v, 0.0)
        return float(np.sum(v)) * self.spec.cell_volume


def reverse_time(f: GridFunction) -> GridFunction:
    return GridFunction(f.spec, f.values[..., ::-1])


def snap_box(spec: GridSpec, box: SpaceTimeBox) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Cell index range ``[start, stop)`` per axis for ``box``.

    Boundaries snap to the nearest cell boundary.  Raises when the box leaves
    the domain or snaps to nothing.
    """
    d = spec.domain
    if not d.contains(box, tol=1e-9 * max(1.0, d.volume)):
        raise GridError(f"box {box} leaves the domain {d}")
    start, stop = [], []
    for a, h in enumerate(spec.spacing):
        start.append(round_half_up((box.lo[a] - d.lo[a]) / h))
        stop.append(round_half_up((box.hi[a] - d.lo[a]) / h))
    start.append(round_half_up((box.t0 - d.t0) / spec.dt))
    stop.append(round_half_up((box.t1 - d.t0) / spec.dt))
    start = tuple(max(0, s) for s in start)
    stop = tuple(min(n, s) for n, s in zip(spec.shape, stop))
    if any(b <= a for a, b in zip(start, stop)):
        raise GridError(f"box {box} snaps to an empty cell range")
    return start, stop


def snapped_box(spec: GridSpec, start: Sequence[int], stop: Sequence[int]) -> SpaceTimeBox:
    d = spec.domain
    lo = tuple(d.lo[a] + start[a] * h for a, h in enumerate(spec.spacing))
    hi = tuple(d.lo[a] + stop[a] * h for a, h in enumerate(spec.spacing))
    return SpaceTimeBox(lo, hi, d.t0 + start[-1] * spec.dt, d.t0 + stop[-1] * spec.dt)


def box_average(f: GridFunction, box: SpaceTimeBox, exponent: float = 1.0) -> float:
    """Average of ``f**exponent`` over the snapped box (exact for the cell model)."""
    start, stop = snap_box(f.spec, box)
    count = math.prod(b - a for a, b in zip(start, stop))
    return f.table(exponent).box_sum(start, stop) / count


def power_transform(f: GridFunction, e: float) -> GridFunction:
    if e < 0 and np.any(f.values <= 0):
        raise GridError("nonpositive value raised to a negative power")
    if e != int(e) and np.any(f.values < 0):
        raise GridError("negative value raised to a fractional power")
    if e == 1:
        return f
    return GridFunction(f.spec, np.power(f.values, e))


def level_measure(
    f: GridFunction, lam: float, region: Optional[SpaceTimeBox] = None, weight: Optional[GridFunction] = None
) -> float:
    """Lebesgue (or ``weight``-) measure of ``{f > lam}`` inside ``region``."""
    if weight is not None and weight.spec != f.spec:
        raise GridError("weight and function live on different grids")
    sel = f.values > lam
    if region is not None:
        start, stop = snap_box(f.spec, region)
        box = np.zeros_like(sel)
        box[tuple(slice(a, b) for a, b in zip(start, stop))] = True
        sel &= box
    dens = np.where(sel, 1.0 if weight is None else weight.values, 0.0)
    return float(np.sum(dens)) * f.spec.cell_volume


def combine(f: GridFunction, g: GridFunction, mode: str, floor: float = FLOOR_EPS) -> GridFunction:
    if f.spec != g.spec:
        raise GridError("cannot combine functions on different grids")
    a, b = f.values, g.values
    if mode == "min":
        out = np.minimum(a, b)
    elif mode == "max":
        out = np.maximum(a, b)
    elif mode == "product":
        out = a * b
    elif mode == "quotient":
        if np.any(np.abs(b) < floor):
            raise GridError("quotient by a value below the floor")
        out = a / b
    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return GridFunction(f.spec, out)


def mean_windows(f: GridFunction, exponent: float, starts, stops) -> np.ndarray:
    """Window averages of ``f**exponent``; all windows must lie in the grid."""
    count = math.prod(int(np.asarray(b - a).flat[0]) for a, b in zip(starts, stops))
    return f.table(exponent).window_sums(starts, stops) / count


def mean_windows_naive(f: GridFunction, exponent: float, starts, stops) -> np.ndarray:
    """Direct-summation twin of :func:`mean_windows` (testing oracle)."""
    vals = f.values if exponent == 1.0 else np.power(f.values, exponent)
    shape = tuple(len(s) for s in starts)
    out = np.empty(shape)
    for idx in np.ndindex(*shape):
        sl = tuple(slice(int(starts[a][i]), int(stops[a][i])) for a, i in enumerate(idx))
        out[idx] = np.mean(vals[sl])
    return out


# -- CSV grid format -------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(f: GridFunction, path) -> None:
    """Header ``n,cells...,timeCells,lo...,hi...,t0,t1``; then one line per time slice."""
    spec = f.spec
    d = spec.domain
    header = [str(spec.n), *map(str, spec.cells), str(spec.time_cells)]
    header += [_fmt(v) for v in (*d.lo, *d.hi, d.t0, d.t1)]
    time_major = np.moveaxis(f.values, -1, 0).reshape(spec.time_cells, -1)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in time_major]
    from .report import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path) -> GridFunction:
    try:
        with open(path) as fh:
            head = fh.readline().strip().split(",")
            body = fh.read().replace("\n", ",").split(",")
        n = int(head[0])
        cells = tuple(int(c) for c in head[1 : 1 + n])
        time_cells = int(head[1 + n])
        rest = [float(v) for v in head[2 + n :]]
        if len(rest) != 2 * n + 2:
            raise GridError(f"header has {len(rest)} bounds, expected {2 * n + 2}")
        spec = GridSpec(cells, time_cells, SpaceTimeBox(tuple(rest[:n]), tuple(rest[n : 2 * n]), rest[-2], rest[-1]))
        vals = np.array([float(v) for v in body if v.strip()], dtype=np.float64)
        if vals.size != math.prod(spec.shape):
            raise GridError(f"expected {math.prod(spec.shape)} values, found {vals.size}")
        vals = np.moveaxis(vals.reshape((time_cells,) + cells), 0, -1)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, GridError):
            raise
        raise GridError(f"malformed grid file {path}: {exc}") from exc
    return GridFunction(spec, vals)
