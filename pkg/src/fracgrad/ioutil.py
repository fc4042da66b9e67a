"""Deterministic text serialization helpers.

All files the package emits go through these functions so that repeated
runs with the same inputs are byte-identical: floats are printed with 17
significant digits (enough to round-trip a double exactly), dict keys
keep insertion order, and rows are written with plain "\n" newlines.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["format_float", "dumps_json", "write_csv"]


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_scalar(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format_float(x)
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{out}"'
    raise TypeError(f"cannot serialize {type(obj)}")


def dumps_json(obj, indent: int = 0) -> str:
    """JSON text with .17g floats; non-finite floats use the Python
    extensions (NaN/Infinity) that json.loads parses back."""
    pad = " " * indent
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {_json_scalar(str(k))}: {dumps_json(v, indent + 2)}'
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        if flat:
            return "[" + ", ".join(_json_scalar(v) for v in obj) + "]"
        items = [f"{pad}  {dumps_json(v, indent + 2)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    return _json_scalar(obj)


def write_csv(path, header: list[str], rows) -> None:
    """Rows of mixed scalars; floats formatted at 17 significant digits."""
    def cell(v) -> str:
        if v is None:
            return ""
        if isinstance(v, (float, np.floating)):
            return format_float(v)
        return str(v)

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")
