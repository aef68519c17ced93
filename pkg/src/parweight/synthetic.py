"""Seeded synthetic inputs and the closed forms that go with them."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import ndimage

from .geometry import Exponents, GridSpec
from .gridfn import GridFunction

DEFAULT_CELLS = 16
DEFAULT_TIME_CELLS = 512


def default_grid(n: int = 1, cells: int = DEFAULT_CELLS, time_cells: int = DEFAULT_TIME_CELLS, t1: float = 1.0) -> GridSpec:
    return GridSpec.regular((cells,) * n, time_cells, (0.0,) * n, (1.0,) * n, 0.0, t1)


def exp_time(spec: GridSpec, rate: float = 1.0) -> GridFunction:
    """``w = exp(rate * t)``."""
    return GridFunction.from_callable(spec, lambda *c: np.exp(rate * c[-1]))


def log_smooth(spec: GridSpec, rng: np.random.Generator, amplitude: float = 1.0, smoothing: float = 2.0) -> GridFunction:
    """``exp(amplitude * g)`` with ``g`` smoothed white noise scaled to max ``|g| = 1``."""
    g = ndimage.gaussian_filter(rng.standard_normal(spec.shape), smoothing, mode="wrap")
    g /= np.max(np.abs(g))
    return GridFunction(spec, np.exp(amplitude * g))


def indicator(spec: GridSpec, start, stop) -> GridFunction:
    """Indicator of the cell box ``[start, stop)``."""
    vals = np.zeros(spec.shape)
    vals[tuple(slice(a, b) for a, b in zip(start, stop))] = 1.0
    return GridFunction(spec, vals)


def indicator_battery(spec: GridSpec, rng: np.random.Generator, count: int = 5, refine=1) -> list[GridFunction]:
    """Indicators of random cell boxes covering 1/8 to 1/2 of each axis.

    Boxes are drawn on the grid coarsened by ``refine`` (an int or one factor
    per axis), so the same seed yields the same continuous boxes on refined
    grids.
    """
    out = []
    factors = (refine,) * len(spec.shape) if isinstance(refine, int) else tuple(refine)
    coarse = [n // r for n, r in zip(spec.shape, factors)]
    for _ in range(count):
        start, stop = [], []
        for n in coarse:
            width = int(rng.integers(max(1, n // 8), max(2, n // 2) + 1))
            a = int(rng.integers(0, n - width + 1))
            start.append(a)
            stop.append(a + width)
        out.append(indicator(spec, [a * r for a, r in zip(start, factors)], [b * r for b, r in zip(stop, factors)]))
    return out


GENERATORS: dict[str, Callable[[GridSpec, np.random.Generator], GridFunction]] = {
    "const": lambda spec, rng: GridFunction.constant(spec, 1.0),
    "exp-t": lambda spec, rng: exp_time(spec, 1.0),
    "exp-neg-t": lambda spec, rng: exp_time(spec, -1.0),
    "log-smooth": lambda spec, rng: log_smooth(spec, rng),
}


def generate(name: str, spec: GridSpec, seed: int = 0) -> GridFunction:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown synthetic generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(spec, np.random.default_rng(seed))


# -- closed forms for w = exp(c t) -----------------------------------------


def _avg_exp(c: float, a: float, b: float) -> float:
    """Average of ``exp(c s)`` over ``(a, b)``, divided by ``exp(c a)``."""
    x = c * (b - a)
    return 1.0 if x == 0 else math.expm1(x) / x


def exp_aq_closed_form(L: float, exps: Exponents, rate: float = 1.0, lag: float | None = None) -> float:
    """A_q^+ product of ``exp(rate t)`` on one rectangle with time half-length ``L``.

    ``lag`` is the absolute time gap ``gamma L`` (defaults to it).
    """
    g = exps.gamma * L if lag is None else lag
    q = exps.q
    width = L - g
    # avg over (t-L, t-g) of e^{cs} = e^{ct} e^{-cL} avg_exp(c, 0, width)
    past = math.exp(-rate * L) * _avg_exp(rate, 0.0, width)
    c2 = -rate / (q - 1)
    future = math.exp(c2 * g) * _avg_exp(c2, 0.0, width)
    return past * future ** (q - 1)


def exp_reverse_holder_closed_form(L: float, delta: float, rate: float = 1.0) -> float:
    """Lag-free reverse Hölder quotient of ``exp(rate t)`` with time half-length ``L``."""
    c = rate * (1 + delta)
    past = (math.exp(-c * L) * _avg_exp(c, 0.0, L)) ** (1 / (1 + delta))
    future = _avg_exp(rate, 0.0, L)
    return past / future


def exp_a1_closed_form(L: float, gamma: float, rate: float = 1.0) -> float:
    """``avg_{R^-(gamma)} exp(rate s) / exp(rate t)`` for one rectangle."""
    g = gamma * L
    return math.exp(-rate * L) * _avg_exp(rate, 0.0, L - g)
