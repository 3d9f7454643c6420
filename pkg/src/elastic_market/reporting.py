"""Deterministic CSV and report emission.

Floating values are written with 17 significant digits so every number
round-trips exactly; identical inputs therefore produce byte-identical
output.  Reports use the same JSON syntax as scenario files.
"""

from __future__ import annotations

import math

__all__ = ["format_value", "render_csv", "render_report"]


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def render_csv(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def _render_json(obj, indent):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{k}": {_render_json(v, indent + 1)}' for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not len(obj):
            return "[]"
        items = [f"{pad}  {_render_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return f'"{format_value(obj)}"'
        return format(obj, ".17g")
    if isinstance(obj, int):
        return str(obj)
    escaped = str(obj).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def render_report(obj):
    """Serialize a report dict as JSON with exact float round-trips."""
    return _render_json(obj, 0) + "\n"
