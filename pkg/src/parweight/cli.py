"""Command-line front end.

Exit codes: 0 success, 2 usage or invalid parameters, 3 unreadable or
unusable input data, 4 numerical failure.  Reports go to ``--out`` and are
byte-identical for identical arguments.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


from .bmo import FitRefused, bridge_offsets, family_cells, jn_decay_fit, pbmo_objective, pbmo_seminorm, weight_to_bmo
from .construct import (
    MeasureSpec,
    PipelineError,
    SupersolutionSpec,
    cr_bmo,
    cr_weight_detail,
    heat_residual,
    supersolution,
    supersolution_representation,
)
from .factorize import FactorizationError, factorize
from .geometry import EmptyFamilyError, Exponents, GridSpec, dyadic_scales, enumerate_family
from .gridfn import GridError, GridFunction, read_csv, write_csv
from .maximal import NoAdmissibleScaleError, maximal_backward, maximal_forward, set_default_workers
from .report import SchemaError, write_report, write_table
from .synthetic import GENERATORS, default_grid, exp_aq_closed_form, generate
from .weights import NumericalError, a1_constant, aq_constant, reverse_holder, verdict

log = logging.getLogger("parweight")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    grid: Optional[str] = None
    synthetic: Optional[str] = None
    dim: int = 1
    cells: int = 16
    time_cells: int = 512
    t1: float = 1.0
    exps: Exponents = field(default_factory=Exponents)
    scale_count: int = 4
    stride: float = 0.5
    tol: float = 1e-10
    seed: int = 0
    out: str = "report.json"
    oracle: bool = False
    threads: Optional[int] = None
    table: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "command": self.command,
            "grid": self.grid,
            "synthetic": self.synthetic,
            "exponents": self.exps.as_dict(),
            "scaleCount": self.scale_count,
            "stride": self.stride,
            "tol": self.tol,
            "seed": self.seed,
            "oracle": self.oracle,
        }
        if self.synthetic:
            d["syntheticGrid"] = {"dim": self.dim, "cells": self.cells, "timeCells": self.time_cells, "t1": self.t1}
        d.update({k: v for k, v in sorted(self.extra.items())})
        return d


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("input")
    src.add_argument("--grid", help="input grid CSV")
    src.add_argument("--synthetic", help=f"built-in generator: {', '.join(sorted(GENERATORS))}")
    src.add_argument("--dim", type=int, default=1, help="spatial dimension of synthetic grids")
    src.add_argument("--cells", type=int, default=16, help="spatial cells per axis of synthetic grids")
    src.add_argument("--time-cells", type=int, default=512)
    src.add_argument("--t1", type=float, default=1.0, help="end time of synthetic grids (start is 0)")
    par = common.add_argument_group("parameters")
    par.add_argument("--p", type=float, default=2.0)
    par.add_argument("--q", type=float, default=2.0)
    par.add_argument("--gamma", type=float, default=0.0)
    par.add_argument("--scales", type=int, default=4, help="number of dyadic scales")
    par.add_argument("--stride", type=float, default=0.5)
    par.add_argument("--tol", type=float, default=1e-10)
    par.add_argument("--seed", type=int, default=0)
    par.add_argument("--oracle", action="store_true", help="use the naive maximal-function path")
    par.add_argument("--threads", type=int, help="worker threads (PARWEIGHT_THREADS overrides)")
    out = common.add_argument_group("output")
    out.add_argument("--out", default="report.json", help="JSON report path")
    out.add_argument("--table", help="CSV table for plotting (refinement curve or level-set decay)")
    out.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="parweight", description="Parabolic Muckenhoupt weight toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("classify", parents=[common], help="estimate weight-class constants")
    c.add_argument("--q-grid", default="1.5,2,4")
    c.add_argument("--delta-grid", default="0.25,0.5,1")
    m = sub.add_parser("maximal", parents=[common], help="lagged maximal function of a grid")
    m.add_argument("--direction", choices=["+", "-"], default="+")
    m.add_argument("--out-grid", help="output grid CSV (default: report path with .csv)")
    f = sub.add_parser("factorize", parents=[common], help="w = u v^(1-q)")
    f.add_argument("--out-prefix", help="prefix for the u and v CSV grids (default: report path stem)")
    k = sub.add_parser("construct", parents=[common], help="build weights and PBMO functions")
    k.add_argument("--kind", choices=["cr-weight", "cr-bmo", "supersolution"], default="cr-weight")
    k.add_argument("--measure", help="measure JSON (mu); raise --scales until the windows reach its masses")
    k.add_argument("--measure2", help="second measure JSON (nu) for cr-bmo")
    k.add_argument("--delta", type=float, default=0.5)
    k.add_argument("--alpha", type=float, default=1.0)
    k.add_argument("--beta", type=float, default=1.0)
    k.add_argument("--family", choices=["increasingTime", "heatKernel"], default="increasingTime")
    k.add_argument("--rate", type=float, default=1.0)
    k.add_argument("--source-t", type=float, default=0.0)
    k.add_argument("--out-grid", help="output grid CSV (default: report path with .csv)")
    b = sub.add_parser("bmo", parents=[common], help="parabolic BMO seminorm and decay fit")
    b.add_argument("--as-weight", action="store_true", help="treat the input as a weight w and use u = -log w")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    try:
        exps = Exponents(ns.p, ns.q, ns.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if ns.scales < 1:
        raise UsageError("--scales must be >= 1")
    if not 0 < ns.stride <= 1:
        raise UsageError("--stride must lie in (0, 1]")
    if not ns.tol > 0:
        raise UsageError("--tol must be positive")
    if ns.threads is not None and ns.threads < 1:
        raise UsageError("--threads must be >= 1")
    if ns.command != "construct" and (ns.grid is None) == (ns.synthetic is None):
        raise UsageError("give exactly one of --grid and --synthetic")
    if ns.synthetic is not None and ns.synthetic not in GENERATORS:
        raise UsageError(f"unknown synthetic generator {ns.synthetic!r}")
    if ns.dim < 1 or ns.cells < 2 or ns.time_cells < 2 or not ns.t1 > 0:
        raise UsageError("synthetic grid needs dim >= 1, >= 2 cells per axis and t1 > 0")
    extra = {}
    if ns.command == "classify":
        extra["qGrid"] = _floats(ns.q_grid)
        extra["deltaGrid"] = _floats(ns.delta_grid)
        if any(q <= 1 for q in extra["qGrid"]) or any(d <= 0 for d in extra["deltaGrid"]):
            raise UsageError("q values must exceed 1 and delta values must be positive")
    elif ns.command == "maximal":
        extra["direction"] = ns.direction
    elif ns.command == "construct":
        extra.update(kind=ns.kind, delta=ns.delta, alpha=ns.alpha, beta=ns.beta, family=ns.family, rate=ns.rate)
        extra["sourceT"] = ns.source_t
        extra.update(measure=ns.measure, measure2=ns.measure2)
        if ns.kind != "supersolution" and not ns.measure:
            raise UsageError(f"--kind {ns.kind} needs --measure")
        if ns.kind == "cr-bmo" and not ns.measure2:
            raise UsageError("--kind cr-bmo needs --measure2")
        if not 0 <= ns.delta < 1:
            raise UsageError("--delta must lie in [0, 1)")
        if ns.kind == "supersolution" and ns.family == "heatKernel" and ns.p != 2:
            raise UsageError("the heat kernel family needs --p 2")
    elif ns.command == "bmo":
        extra["asWeight"] = ns.as_weight
    return RunConfig(
        ns.command,
        ns.grid,
        ns.synthetic,
        ns.dim,
        ns.cells,
        ns.time_cells,
        ns.t1,
        exps,
        ns.scales,
        ns.stride,
        ns.tol,
        ns.seed,
        ns.out,
        ns.oracle,
        ns.threads,
        ns.table,
        extra,
    )


# -- inputs and refinement --------------------------------------------------


def _synthetic_spec(cfg: RunConfig, level: int = 0, extend: bool = False) -> GridSpec:
    # refinement is parabolic: h -> h/2 and dt -> dt/2^p
    time_factor = round(2.0 ** (cfg.exps.p * level))
    k = 2 if extend else 1
    return default_grid(cfg.dim, cfg.cells * 2**level, cfg.time_cells * time_factor * k, cfg.t1 * k)


def load_input(cfg: RunConfig, level: int = 0, extend: bool = False) -> GridFunction:
    """Input grid; synthetic inputs can be refined (``level``) or time-extended."""
    if cfg.synthetic:
        return generate(cfg.synthetic, _synthetic_spec(cfg, level, extend), cfg.seed)
    try:
        return read_csv(cfg.grid)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.grid}: {exc}") from exc


def _variants(cfg: RunConfig):
    """``(label, input, scale count, stride)`` for base, refined and (synthetic) extended runs."""
    base = load_input(cfg)
    out = [("base", base, cfg.scale_count, cfg.stride)]
    if cfg.synthetic:
        out.append(("refined", load_input(cfg, level=1), cfg.scale_count + 1, cfg.stride / 2))
        out.append(("extended", load_input(cfg, extend=True), cfg.scale_count + 1, cfg.stride))
    else:
        out.append(("refined", base, cfg.scale_count + 1, cfg.stride / 2))
    return out


def _family(w: GridFunction, cfg: RunConfig, count: int, stride: float):
    return enumerate_family(w.spec, cfg.exps.p, count, stride)


def _scales(w: GridFunction, count: int):
    return dyadic_scales(w.spec, count)


def _entry(values: dict, **head) -> dict:
    base, refined, extended = values.get("base"), values.get("refined"), values.get("extended")
    return {**head, "constant": base, "refinementHistory": [v for v in (base, refined, extended) if v is not None],
            "verdict": verdict(base, refined, extended)}


# -- commands ---------------------------------------------------------------


def cmd_classify(cfg: RunConfig) -> dict:
    variants = _variants(cfg)
    kw = {"oracle": cfg.oracle}
    aq_rows, a1_rows, rh_rows = [], [], []
    fams = {label: _family(w, cfg, n, s) for label, w, n, s in variants}
    for q in cfg.extra["qGrid"]:
        for direction in "+-":
            e = cfg.exps.with_(q=q)
            vals, witness = {}, None
            for label, w, _, _ in variants:
                rep = aq_constant(w, e, direction, fams[label])
                vals[label] = rep.constant
                witness = rep.witness if label == "base" else witness
            aq_rows.append(_entry(vals, q=q, direction=direction, witness=witness.as_dict()))
    for direction in "+-":
        vals = {}
        for label, w, n, _ in variants:
            rep = a1_constant(w, cfg.exps, direction, _scales(w, n), **kw)
            vals[label] = rep.constant
            if label == "base":
                witness = rep.witness
        a1_rows.append(_entry(vals, direction=direction, witness=witness))
    for delta in cfg.extra["deltaGrid"]:
        vals = {label: reverse_holder(w, cfg.exps, delta, fams[label]).constant for label, w, _, _ in variants}
        rh_rows.append(_entry(vals, delta=delta))
    report = {
        "command": "classify",
        "config": cfg.as_dict(),
        "family": fams["base"].provenance_dict(),
        "aq": aq_rows,
        "a1": a1_rows,
        "reverseHolder": rh_rows,
    }
    if cfg.synthetic in ("exp-t", "exp-neg-t", "const"):
        report["closedForm"] = _closed_form_check(variants[0][1], fams["base"], cfg)
    if cfg.table:
        # refinement curve: one row per (q, direction), sign of the direction as a number
        header = ["q", "direction"] + [label for label, *_ in variants]
        rows = [(r["q"], 1.0 if r["direction"] == "+" else -1.0, *r["refinementHistory"]) for r in aq_rows]
        write_table(cfg.table, header, rows)
    return report


def _closed_form_check(w: GridFunction, family, cfg: RunConfig) -> dict:
    """Per-rectangle comparison of the A_q^+ estimator with the exponential closed form."""
    from .weights import aq_values

    rate = {"exp-t": 1.0, "exp-neg-t": -1.0, "const": 0.0}[cfg.synthetic]
    out = []
    for q in cfg.extra["qGrid"]:
        e = cfg.exps.with_(q=q)
        worst = 0.0
        for lv, vals in zip(family.levels, aq_values(w, e, family, "+")):
            if vals is None:
                continue
            L = lv.m * w.spec.dt
            lag = lv.lag_cells(e.gamma, w.spec, e.p) * w.spec.dt
            ref = exp_aq_closed_form(L, e, rate, lag) if rate else 1.0
            worst = max(worst, float(np.max(np.abs(vals / ref - 1))))
        out.append({"q": q, "maxRelativeDeviation": worst})
    return {"rate": rate, "perIndex": out}


def cmd_maximal(cfg: RunConfig, out_grid: Optional[str]) -> dict:
    f = load_input(cfg)
    scales = _scales(f, cfg.scale_count)
    op = maximal_forward if cfg.extra["direction"] == "+" else maximal_backward
    res = op(f, cfg.exps, scales, oracle=cfg.oracle)
    path = out_grid or os.path.splitext(cfg.out)[0] + ".csv"
    write_csv(res.output, path)
    counts = {str(s): int(np.sum(res.argmax_scale == s)) for s in scales}
    v = res.values[res.mask]
    return {
        "command": "maximal",
        "config": cfg.as_dict(),
        "outputGrid": os.path.basename(path),
        "validPoints": int(res.mask.sum()),
        "totalPoints": int(res.mask.size),
        "min": float(v.min()),
        "max": float(v.max()),
        "argmaxScaleCounts": counts,
        "undefinedPointsWrittenAs": 0.0,
    }


def cmd_factorize(cfg: RunConfig, prefix: Optional[str]) -> dict:
    results = {}
    for label, w, n, _ in _variants(cfg)[:2]:
        results[label] = factorize(w, cfg.exps, _scales(w, n), tol=cfg.tol, seed=cfg.seed, oracle=cfg.oracle)
    base = results["base"]
    prefix = prefix or os.path.splitext(cfg.out)[0]
    write_csv(base.u_extended, prefix + ".u.csv")
    write_csv(base.v_extended, prefix + ".v.csv")
    ref = results["refined"]
    if cfg.table:
        write_table(cfg.table, ["term", "maxTerm"], list(enumerate(base.trace, start=1)))
    return {
        "command": "factorize",
        "config": cfg.as_dict(),
        "result": base.as_dict(),
        "outputGrids": [os.path.basename(prefix + ".u.csv"), os.path.basename(prefix + ".v.csv")],
        "a1": [
            {"factor": "u", "direction": "+", "refinementHistory": [base.a1_u, ref.a1_u], "verdict": verdict(base.a1_u, ref.a1_u)},
            {"factor": "v", "direction": "-", "refinementHistory": [base.a1_v, ref.a1_v], "verdict": verdict(base.a1_v, ref.a1_v)},
        ],
    }


def _read_measure(path: str) -> MeasureSpec:
    try:
        with open(path) as fh:
            return MeasureSpec.from_json(fh.read(), os.path.dirname(os.path.abspath(path)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read measure {path}: {exc}") from exc


def cmd_construct(cfg: RunConfig, out_grid: Optional[str]) -> dict:
    x = cfg.extra
    path = out_grid or os.path.splitext(cfg.out)[0] + ".csv"
    if cfg.grid:
        spec = load_input(cfg).spec
    else:
        spec = default_grid(cfg.dim, cfg.cells, cfg.time_cells, cfg.t1)
    if x["kind"] == "supersolution" and x["family"] == "heatKernel" and not cfg.grid:
        t0 = x["sourceT"] + 1.0
        spec = spec.with_time(t0, t0 + cfg.t1, cfg.time_cells)
    scales = _scales(GridFunction.constant(spec, 1.0), cfg.scale_count)
    report = {"command": "construct", "config": cfg.as_dict()}
    if x["kind"] == "cr-weight":
        m = _read_measure(x["measure"])
        cw = cr_weight_detail(m, x["delta"], cfg.exps, scales, spec)
        out = cw.weight
        report["clampedPoints"] = cw.clamped
        report["a1Plus"] = a1_constant(out, cfg.exps, "+", scales).constant
    elif x["kind"] == "cr-bmo":
        mu, nu = _read_measure(x["measure"]), _read_measure(x["measure2"])
        res = cr_bmo(mu, nu, x["alpha"], x["beta"], GridFunction.constant(spec, 0.0), cfg.exps, scales)
        out = res.f
        report["clampedPoints"] = res.clamped
        fam = enumerate_family(spec, cfg.exps.p, cfg.scale_count, cfg.stride)
        report["pbmoSeminorm"] = pbmo_seminorm(out, cfg.exps, fam).seminorm
    else:
        if x["family"] == "increasingTime":
            s = SupersolutionSpec("increasingTime", rate=x["rate"])
        else:
            d = spec.domain
            x0 = tuple((a + b) / 2 for a, b in zip(d.lo, d.hi))
            s = SupersolutionSpec("heatKernel", t0=x["sourceT"], x0=x0)
        out = supersolution(s, spec, cfg.exps)
        fam = enumerate_family(spec, cfg.exps.p, cfg.scale_count, cfg.stride)
        report["pbmoSeminormOfMinusLog"] = pbmo_seminorm(weight_to_bmo(out, 1.0), cfg.exps, fam).seminorm
        report["aq"] = [
            {"q": q, "constant": aq_constant(out, cfg.exps.with_(q=q), "+", fam).constant} for q in (1.5, 2.0, 4.0)
        ]
        if x["family"] == "heatKernel":
            report["heatResidual"] = heat_residual(out)
        rep = supersolution_representation(out, cfg.exps, scales, fam, tol=cfg.tol, seed=cfg.seed)
        report["representation"] = rep.as_dict()
    write_csv(out, path)
    report["outputGrid"] = os.path.basename(path)
    return report


def cmd_bmo(cfg: RunConfig) -> dict:
    g = load_input(cfg)
    u = weight_to_bmo(g.as_weight(), 1.0) if cfg.extra["asWeight"] else g
    rows = {}
    report = {"command": "bmo", "config": cfg.as_dict()}
    for label, src, n, s in _variants(cfg):
        uu = weight_to_bmo(src.as_weight(), 1.0) if cfg.extra["asWeight"] else src
        rows[label] = pbmo_seminorm(uu, cfg.exps, _family(uu, cfg, n, s)).seminorm
    fam = _family(u, cfg, cfg.scale_count, cfg.stride)
    rep = pbmo_seminorm(u, cfg.exps, fam)
    report["pbmo"] = {**rep.as_dict(), **_entry(rows)}
    report["reflected"] = pbmo_seminorm(GridFunction(u.spec, -u.values), cfg.exps, fam, "-").seminorm
    li = len(fam.levels) - 1
    lv = fam.levels[li]
    if rep.offsets[li] is not None:
        idx = np.unravel_index(int(np.argmax(rep.per_level[li])), lv.grid_shape)
        idx = tuple(int(i) for i in idx)
        try:
            fit = jn_decay_fit(u, cfg.exps, family_cells(fam, li, idx, cfg.exps.gamma), float(rep.offsets[li][idx]))
            report["johnNirenberg"] = {"rectangle": fam.rectangle(li, idx).as_dict(), **fit.as_dict()}
            if cfg.table and fit.side is not None:
                side = fit.sides[fit.side]
                write_table(cfg.table, ["lambda", "cells"], list(zip(side["lambdas"], side["counts"])))
        except FitRefused as exc:
            report["johnNirenberg"] = {"refused": str(exc)}
    if cfg.extra["asWeight"] and cfg.exps.q <= 2:
        K = aq_constant(g.as_weight(), cfg.exps, "+", fam).constant
        obj = pbmo_objective(u, cfg.exps, fam, bridge_offsets(g.as_weight(), cfg.exps, fam))
        report["bridge"] = {
            "aqConstant": K,
            "maxObjectiveAtBridgeOffsets": max(float(np.max(o)) for o in obj if o is not None),
            "bound": math.log(2 * (1 + K)),
        }
    return report


# -- entry point ------------------------------------------------------------


def _set_threads(cfg: RunConfig) -> None:
    env = os.environ.get("PARWEIGHT_THREADS")
    if env:
        n = int(env)
    elif cfg.threads:
        n = cfg.threads
    else:
        n = os.cpu_count() or 1
    set_default_workers(n)


def run(cfg: RunConfig, ns: argparse.Namespace) -> dict:
    _set_threads(cfg)
    if cfg.command == "classify":
        return cmd_classify(cfg)
    if cfg.command == "maximal":
        return cmd_maximal(cfg, ns.out_grid)
    if cfg.command == "factorize":
        return cmd_factorize(cfg, ns.out_prefix)
    if cfg.command == "construct":
        return cmd_construct(cfg, ns.out_grid)
    return cmd_bmo(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        report = run(cfg, ns)
        write_report(cfg.out, report)
    except UsageError as exc:
        print(f"parweight: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GridError, SchemaError, EmptyFamilyError, NoAdmissibleScaleError) as exc:
        print(f"parweight: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FactorizationError, PipelineError, OverflowError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"parweight: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
