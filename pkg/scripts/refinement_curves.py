"""Weight-class constants of the synthetic weights under grid refinement and domain extension.

Writes two data-only CSV tables into ``--out-dir``:

* ``refinement.csv``: one row per (weight, level); level ``r`` uses
  ``16 2^r`` spatial cells, ``64 4^r`` time cells and ``4 + r`` dyadic scales.
* ``extension.csv``: one row per (weight, t1) on ``[0, 1] x (0, t1)`` at fixed
  resolution.
"""
from __future__ import annotations

import argparse
import os
import time

import numpy as np

from parweight.geometry import Exponents, GridSpec, dyadic_scales, enumerate_family
from parweight.report import write_table
from parweight.synthetic import generate
from parweight.weights import a1_constant, aq_constant, reverse_holder

WEIGHTS = ("const", "exp-t", "exp-neg-t", "log-smooth")


def constants(w, e, count):
    fam = enumerate_family(w.spec, e.p, count)
    sc = dyadic_scales(w.spec, count)
    return [
        aq_constant(w, e, "+", fam).constant,
        aq_constant(w, e, "-", fam).constant,
        a1_constant(w, e, "+", sc).constant,
        reverse_holder(w, e.with_(gamma=0.0), 0.5, fam).constant,
    ]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--gamma", type=float, default=0.25)
    ap.add_argument("--q", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    e = Exponents(2.0, args.q, args.gamma)
    header = ["weight", "level", "cells", "timeCells", "aqPlus", "aqMinus", "a1Plus", "reverseHolder"]

    rows = []
    for name in WEIGHTS:
        for r in range(args.levels):
            spec = GridSpec.regular((16 * 2**r,), 64 * 4**r, (0.0,), (1.0,), 0.0, 1.0)
            t = time.perf_counter()
            vals = constants(generate(name, spec, args.seed), e, 4 + r)
            rows.append([name, r, spec.cells[0], spec.time_cells, *vals])
            print(f"{name:10s} r={r}: " + " ".join(f"{v:.5g}" for v in vals) + f"  ({time.perf_counter() - t:.1f}s)")
    write_table(os.path.join(args.out_dir, "refinement.csv"), header, rows)

    rows = []
    for name in WEIGHTS:
        for t1 in (1.0, 2.0, 4.0, 8.0):
            spec = GridSpec.regular((16,), int(128 * t1), (0.0,), (1.0,), 0.0, t1)
            count = 4 + int(np.log2(t1)) // 2
            vals = constants(generate(name, spec, args.seed), e, count)
            rows.append([name, t1, spec.cells[0], spec.time_cells, *vals])
    write_table(os.path.join(args.out_dir, "extension.csv"), ["weight", "t1", *header[2:]], rows)


if __name__ == "__main__":
    main()
