"""Parabolic rectangles, grid specifications and finite rectangle families.

Coordinates follow the convention ``(x_1, ..., x_n, t)``: the first ``n``
axes are spatial and the last one is time.  A parabolic rectangle of side
``l`` centred at ``(x, t)`` is ``Q(x, l) x (t - l**p, t + l**p)``; its lagged
upper half is ``Q(x, l) x (t + gamma*l**p, t + l**p)`` and the lower half is
the mirror image of the upper one in the time slice through the centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

# Snapping tolerance in units of cells; keeps exact dyadic ties deterministic.
SNAP_TOL = 1e-9


class EmptyFamilyError(ValueError):
    """No rectangle of the requested family fits inside the domain."""


@dataclass(frozen=True)
class Exponents:
    """The triple (p, q, gamma).

    ``p`` fixes the anisotropic scaling of time against space, ``q`` is the
    integrability index of the weight class and ``gamma`` the time lag.
    """

    p: float = 2.0
    q: float = 2.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.p > 1 and math.isfinite(self.p)):
            raise ValueError(f"p must be a finite real > 1, got {self.p!r}")
        if not (self.q > 1 and math.isfinite(self.q)):
            raise ValueError(f"q must be a finite real > 1, got {self.q!r}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma!r}")

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1)

    @property
    def dual_exponent(self) -> float:
        """The exponent 1 - q' that maps a weight to its dual."""
        return 1.0 - self.q_conj

    def with_(self, **changes) -> "Exponents":
        values = {"p": self.p, "q": self.q, "gamma": self.gamma}
        values.update(changes)
        return Exponents(**values)

    def as_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "gamma": self.gamma}


@dataclass(frozen=True)
class SpaceTimeBox:
    """Axis-aligned box ``prod [lo_i, hi_i] x (t0, t1)``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    t0: float
    t1: float

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lo and hi must be non-empty and of equal length")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate spatial extent {self.lo} .. {self.hi}")
        if not self.t0 < self.t1:
            raise ValueError(f"degenerate time extent ({self.t0}, {self.t1})")

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lo, self.hi)) * (self.t1 - self.t0)

    def contains(self, other: "SpaceTimeBox", tol: float = 1e-12) -> bool:
        return (
            all(a - tol <= c for a, c in zip(self.lo, other.lo))
            and all(d <= b + tol for b, d in zip(self.hi, other.hi))
            and self.t0 - tol <= other.t0
            and other.t1 <= self.t1 + tol
        )

    def as_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "t0": self.t0, "t1": self.t1}


def translate_time(box: SpaceTimeBox, s: float) -> SpaceTimeBox:
    """Shift ``box`` by ``s`` along the time axis."""
    return SpaceTimeBox(box.lo, box.hi, box.t0 + s, box.t1 + s)


@dataclass(frozen=True)
class ParabolicRectangle:
    x: tuple[float, ...]
    t: float
    l: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not self.l > 0:
            raise ValueError(f"side length must be positive, got {self.l}")

    def full(self, p: float) -> SpaceTimeBox:
        half = self.l / 2
        L = self.l**p
        return SpaceTimeBox(
            tuple(c - half for c in self.x), tuple(c + half for c in self.x), self.t - L, self.t + L
        )

    def volume(self, p: float) -> float:
        return self.l ** len(self.x) * 2 * self.l**p

    def as_dict(self) -> dict:
        return {"x": list(self.x), "t": self.t, "l": self.l}


def lagged_halves(R: ParabolicRectangle, gamma: float, p: float) -> tuple[SpaceTimeBox, SpaceTimeBox]:
    """Return ``(R^-(gamma), R^+(gamma))`` as continuous boxes."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma!r}")
    half = R.l / 2
    L = R.l**p
    lo = tuple(c - half for c in R.x)
    hi = tuple(c + half for c in R.x)
    upper = SpaceTimeBox(lo, hi, R.t + gamma * L, R.t + L)
    lower = SpaceTimeBox(lo, hi, R.t - L, R.t - gamma * L)
    return lower, upper


@dataclass(frozen=True)
class GridSpec:
    """Regular space-time grid of ``cells`` spatial cells by ``time_cells``.

    Grid values are stored with shape ``cells + (time_cells,)``: spatial
    axes first, time last.
    """

    cells: tuple[int, ...]
    time_cells: int
    domain: SpaceTimeBox

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        object.__setattr__(self, "time_cells", int(self.time_cells))
        if len(self.cells) != self.domain.n:
            raise ValueError("cells and domain disagree on the spatial dimension")
        if any(c < 2 for c in self.cells) or self.time_cells < 2:
            raise ValueError("every axis needs at least 2 cells")

    @classmethod
    def regular(cls, cells: Sequence[int], time_cells: int, lo, hi, t0: float, t1: float) -> "GridSpec":
        return cls(tuple(cells), time_cells, SpaceTimeBox(tuple(lo), tuple(hi), t0, t1))

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells + (self.time_cells,)

    @property
    def spacing(self) -> tuple[float, ...]:
        d = self.domain
        return tuple((b - a) / c for a, b, c in zip(d.lo, d.hi, self.cells))

    @property
    def dt(self) -> float:
        return (self.domain.t1 - self.domain.t0) / self.time_cells

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing) * self.dt

    def centers(self, axis: int) -> np.ndarray:
        """Cell-centre coordinates along ``axis`` (``axis == n`` is time)."""
        if axis == self.n:
            return self.domain.t0 + (np.arange(self.time_cells) + 0.5) * self.dt
        h = self.spacing[axis]
        return self.domain.lo[axis] + (np.arange(self.cells[axis]) + 0.5) * h

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable cell-centre coordinate arrays, one per axis."""
        return tuple(np.meshgrid(*[self.centers(a) for a in range(self.n + 1)], indexing="ij"))

    def point(self, index: Sequence[int]) -> tuple[float, ...]:
        return tuple(float(self.centers(a)[i]) for a, i in enumerate(index))

    def with_time(self, t0: float, t1: float, time_cells: int) -> "GridSpec":
        d = self.domain
        return GridSpec(self.cells, time_cells, SpaceTimeBox(d.lo, d.hi, t0, t1))

    def as_dict(self) -> dict:
        return {"n": self.n, "cells": list(self.cells), "timeCells": self.time_cells, "domain": self.domain.as_dict()}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + SNAP_TOL))


def dyadic_scales(spec: GridSpec, count: int, l_min: float | None = None) -> list[float]:
    """``count`` dyadic side lengths starting at the coarsest spatial cell."""
    if count < 1:
        raise ValueError("scale count must be >= 1")
    base = max(spec.spacing) if l_min is None else float(l_min)
    return [base * 2.0**k for k in range(count)]


@dataclass(frozen=True)
class FamilyLevel:
    """All family rectangles of one side length.

    Rectangles are cell aligned: spatially they cover cells
    ``[i, i + k)`` along each axis, and in time they are centred on the cell
    boundary ``j`` with half-length ``m`` cells, so the full rectangle covers
    time cells ``[j - m, j + m)``.
    """

    scale: float
    k: tuple[int, ...]
    m: int
    starts: tuple[np.ndarray, ...]
    centers: np.ndarray

    @property
    def count(self) -> int:
        return math.prod(len(s) for s in self.starts) * len(self.centers)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.starts) + (len(self.centers),)

    def lag_cells(self, gamma: float, spec: GridSpec, p: float) -> int:
        return round_half_up(gamma * self.scale**p / spec.dt)

    def half_windows(self, gamma: float, spec: GridSpec, p: float, half: str):
        """Per-axis (start, stop) cell arrays for the requested half.

        Returns ``None`` when the lag swallows the whole half at this scale.
        """
        a = self.lag_cells(gamma, spec, p)
        if a >= self.m:
            return None
        starts = [s for s in self.starts]
        stops = [s + k for s, k in zip(self.starts, self.k)]
        if half == "+":
            starts.append(self.centers + a)
            stops.append(self.centers + self.m)
        elif half == "-":
            starts.append(self.centers - self.m)
            stops.append(self.centers - a)
        else:
            raise ValueError(f"half must be '+' or '-', got {half!r}")
        return tuple(starts), tuple(stops)


@dataclass(frozen=True)
class RectangleFamily:
    spec: GridSpec
    p: float
    levels: tuple[FamilyLevel, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return sum(lv.count for lv in self.levels)

    @property
    def scales(self) -> list[float]:
        return [lv.scale for lv in self.levels]

    def rectangle(self, level: int, index: Sequence[int]) -> ParabolicRectangle:
        """Continuous rectangle for a lattice position of ``levels[level]``."""
        lv = self.levels[level]
        d = self.spec.domain
        x = tuple(
            d.lo[a] + (int(lv.starts[a][index[a]]) + lv.k[a] / 2) * h for a, h in enumerate(self.spec.spacing)
        )
        t = d.t0 + int(lv.centers[index[-1]]) * self.spec.dt
        return ParabolicRectangle(x, t, lv.scale)

    def locate(self, flat: int) -> tuple[int, tuple[int, ...]]:
        """Map a flat index in family order to ``(level, lattice index)``."""
        for li, lv in enumerate(self.levels):
            if flat < lv.count:
                return li, tuple(int(v) for v in np.unravel_index(flat, lv.grid_shape))
            flat -= lv.count
        raise IndexError("flat index beyond family size")

    @cached_property
    def rectangles(self) -> list[ParabolicRectangle]:
        out = []
        for li, lv in enumerate(self.levels):
            for idx in np.ndindex(*lv.grid_shape):
                out.append(self.rectangle(li, idx))
        return out

    def provenance_dict(self) -> dict:
        return {**self.provenance, "grid": self.spec.as_dict(), "p": self.p, "size": self.size}


def enumerate_family(
    spec: GridSpec,
    p: float,
    scale_count: int,
    stride: float = 0.5,
    l_min: float | None = None,
) -> RectangleFamily:
    """Dyadic rectangle family whose full rectangles lie inside the domain.

    For ``l = l_min * 2**k`` the spatial lattice has stride ``stride * l``
    and the time lattice ``stride * l**p`` (both rounded to whole cells, at
    least one).  Rectangles sticking out of the domain are dropped, never
    truncated.  Order is scale-major, then lexicographic in ``(x, t)``.
    """
    if scale_count < 1:
        raise ValueError("scale_count must be >= 1")
    if not 0 < stride <= 1:
        raise ValueError("stride must lie in (0, 1]")
    scales = dyadic_scales(spec, scale_count, l_min)
    d = spec.domain
    levels = []
    skipped = []
    for l in scales:
        L = l**p
        k = tuple(max(1, round_half_up(l / h)) for h in spec.spacing)
        m = max(1, round_half_up(L / spec.dt))
        fits_space = all(l <= (b - a) * (1 + 1e-12) for a, b in zip(d.lo, d.hi))
        fits_time = 2 * L <= (d.t1 - d.t0) * (1 + 1e-12)
        if not (fits_space and fits_time) or any(kk > c for kk, c in zip(k, spec.cells)) or 2 * m > spec.time_cells:
            skipped.append(l)
            continue
        sx = [max(1, round_half_up(stride * l / h)) for h in spec.spacing]
        st = max(1, round_half_up(stride * L / spec.dt))
        starts = tuple(np.arange(0, c - kk + 1, s, dtype=np.int64) for c, kk, s in zip(spec.cells, k, sx))
        centers = np.arange(m, spec.time_cells - m + 1, st, dtype=np.int64)
        levels.append(FamilyLevel(l, k, m, starts, centers))
    if not levels:
        raise EmptyFamilyError(f"no dyadic scale among {scales} fits the domain {d}")
    prov = {
        "scales": [lv.scale for lv in levels],
        "skippedScales": skipped,
        "scaleCount": scale_count,
        "stride": stride,
        "lMin": scales[0],
        "clipping": "drop",
    }
    return RectangleFamily(spec, float(p), tuple(levels), prov)
