"""Flat ``key=value`` records, the contract format for every result type.

Floats are written with ``repr`` so records round-trip bit-exactly; vectors
are comma-separated.  A JSON mirror is available for convenience but the flat
record is what downstream tooling should parse.
"""

from __future__ import annotations

import json
import math
from typing import Any, Mapping

import numpy as np


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.ndarray) or isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in np.asarray(value, dtype=float).ravel())
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return str(value)


def format_record(fields: Mapping[str, Any]) -> str:
    lines = []
    for key, value in fields.items():
        if value is None:
            continue
        text = _fmt(value)
        if "\n" in text:
            raise ValueError(f"field {key!r} spans lines")
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def parse_record(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"not a key=value line: {line!r}")
        out[key.strip()] = value
    return out


def parse_vector(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(",") if t], dtype=np.float64)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if hasattr(value, "value"):
        return value.value
    return value


def to_json(fields: Mapping[str, Any]) -> str:
    return json.dumps(_jsonable(dict(fields)), sort_keys=False, indent=2)
