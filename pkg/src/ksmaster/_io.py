"""Serialization helpers: JSON with 17-significant-digit floats, CSV writing."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np


def fmt_float(v) -> str:
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        # not representable in strict JSON; callers should not emit these
        return "null"
    s = format(v, ".17g")
    if all(ch not in s for ch in ".eE"):
        s += ".0"
    return s


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON encoder writing every float with 17 significant digits.

    Output is deterministic: dict keys keep insertion order.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_str(k)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return _str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _str(s) -> str:
    import json

    return json.dumps(str(s))


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_csv(path, columns, rows, meta=None) -> None:
    """Write a CSV: header row first, then `#`-prefixed metadata lines, then rows with 17-digit floats."""
    lines = [",".join(columns)]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {v}")
    for row in rows:
        lines.append(",".join(fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    write_text(path, "\n".join(lines) + "\n")


def sha256_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()
