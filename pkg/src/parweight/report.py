"""Deterministic JSON reports.

Floats are written with 17 significant digits, keys keep insertion order and
non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
Files are written to a temporary sibling and renamed into place, so a
reader never sees a partial report.
"""
from __future__ import annotations

import json
import math
import os
import tempfile

import numpy as np

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if all(ch not in s for ch in ".eEn"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "as_dict"):
        return _encode(obj.as_dict(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(report: dict, indent: int = 2) -> str:
    body = {"schemaVersion": SCHEMA_VERSION}
    body.update({k: v for k, v in report.items() if k != "schemaVersion"})
    return _encode(body, indent, 0) + "\n"


def _decode_special(obj):
    if isinstance(obj, dict):
        return {k: _decode_special(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_special(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def loads(text: str) -> dict:
    data = json.loads(text)
    version = data.get("schemaVersion")
    if not isinstance(version, int) or version > SCHEMA_VERSION:
        raise SchemaError(f"unsupported report schema version {version!r} (this reader knows {SCHEMA_VERSION})")
    return _decode_special(data)


def atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(path, report: dict) -> str:
    text = dumps(report)
    atomic_write_text(path, text)
    return text


def read_report(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())


def write_table(path, header, rows) -> None:
    """Plot-ready CSV table (data only)."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, str):
                cells.append(v)
            elif isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                cells.append(str(int(v)))
            else:
                cells.append(_float(float(v)).strip('"'))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
