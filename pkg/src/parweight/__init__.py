"""Parabolic Muckenhoupt weights on regular space-time grids.

Lagged maximal operators, one-sided A_q and A_1 constants, parabolic BMO,
factorization ``w = u v^(1-q)`` and constructions from measures.
"""
from .geometry import Exponents, GridSpec, ParabolicRectangle, RectangleFamily, dyadic_scales, enumerate_family
from .gridfn import GridFunction, read_csv, write_csv
from .maximal import maximal, maximal_backward, maximal_forward
from .weights import a1_constant, aq_constant, reverse_holder, verdict
from .bmo import jn_decay_fit, pbmo_seminorm
from .factorize import factorize
from .construct import MeasureSpec, cr_bmo, cr_weight, supersolution, supersolution_representation

__all__ = [
    "Exponents",
    "GridSpec",
    "ParabolicRectangle",
    "RectangleFamily",
    "dyadic_scales",
    "enumerate_family",
    "GridFunction",
    "read_csv",
    "write_csv",
    "maximal",
    "maximal_forward",
    "maximal_backward",
    "a1_constant",
    "aq_constant",
    "reverse_holder",
    "verdict",
    "jn_decay_fit",
    "pbmo_seminorm",
    "factorize",
    "MeasureSpec",
    "cr_bmo",
    "cr_weight",
    "supersolution",
    "supersolution_representation",
]

__version__ = "0.1.0"
