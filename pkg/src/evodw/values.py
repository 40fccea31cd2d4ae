"""Scalar value typing: the five field types, the inference lattice, coercion.

Field values inside the engine are plain Python objects: ``None`` for null,
``bool``, ``int``, ``float`` (DECIMAL), and ``str`` (TEXT and TIMESTAMP;
timestamps stay ISO-8601 text end to end, which keeps comparisons and JSON
round-trips trivial at desk scale).
"""

from __future__ import annotations

import json
import re
from datetime import datetime, timedelta, timezone

VALUE_TYPES = ("BOOLEAN", "INTEGER", "DECIMAL", "TEXT", "TIMESTAMP")

# Inference lattice; TIMESTAMP sits on a side branch and reconciles with the
# chain only through TEXT.
_CHAIN_RANK = {"NULL": 0, "BOOLEAN": 1, "INTEGER": 2, "DECIMAL": 3, "TEXT": 4}

# Widening chain used by type adaptation (INTEGER -> DECIMAL -> TEXT).
_WIDEN_RANK = {"INTEGER": 0, "DECIMAL": 1, "TEXT": 2}

_INT_RE = re.compile(r"^[+-]?\d+$")
_DEC_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+[eE][+-]?\d+|\d+\.\d*[eE][+-]?\d+)$")
_TS_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}(T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2})?)?$"
)

# Base of the logical event clock. Every committed event advances it by one
# second, which makes exports reproducible run to run.
CLOCK_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)


def logical_timestamp(seq: int) -> str:
    """ISO-8601 UTC text for logical event number ``seq``."""
    return (CLOCK_EPOCH + timedelta(seconds=seq)).strftime("%Y-%m-%dT%H:%M:%SZ")


def looks_like_timestamp(text: str) -> bool:
    return bool(_TS_RE.match(text))


def infer_cell_type(text: str) -> str:
    """Type of one delimited-file cell. Empty cells read as NULL."""
    if text == "":
        return "NULL"
    if text in ("true", "false"):
        return "BOOLEAN"
    if _INT_RE.match(text):
        return "INTEGER"
    if _DEC_RE.match(text):
        return "DECIMAL"
    if _TS_RE.match(text):
        return "TIMESTAMP"
    return "TEXT"


def infer_json_type(value: object) -> str:
    """Type of one JSON value. Nested structures collapse to TEXT."""
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "BOOLEAN"
    if isinstance(value, int):
        return "INTEGER"
    if isinstance(value, float):
        return "DECIMAL"
    if isinstance(value, str):
        return "TIMESTAMP" if _TS_RE.match(value) else "TEXT"
    return "TEXT"


def lub(a: str, b: str) -> str:
    """Least upper bound of two inferred types."""
    if a == b:
        return a
    if a == "NULL":
        return b
    if b == "NULL":
        return a
    if a == "TIMESTAMP" or b == "TIMESTAMP":
        return "TEXT"
    return a if _CHAIN_RANK[a] >= _CHAIN_RANK[b] else b


def widen(a: str, b: str) -> str:
    """Widened type along INTEGER -> DECIMAL -> TEXT; anything off the chain
    reconciles at TEXT."""
    if a == b:
        return a
    if a in _WIDEN_RANK and b in _WIDEN_RANK:
        return a if _WIDEN_RANK[a] >= _WIDEN_RANK[b] else b
    return "TEXT"


def is_wider(a: str, b: str) -> bool:
    return a != b and widen(a, b) == a


def value_to_text(value: object) -> str:
    """Canonical text form used by TEXT widening and cast()."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce_json_value(value: object, value_type: str):
    """Coerce a JSON-decoded value to a field type.

    Raises ValueError when the value cannot conform; null handling is the
    caller's job.
    """
    if value_type == "BOOLEAN":
        if isinstance(value, bool):
            return value
    elif value_type == "INTEGER":
        if isinstance(value, bool):
            raise ValueError("boolean is not INTEGER")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif value_type == "DECIMAL":
        if isinstance(value, bool):
            raise ValueError("boolean is not DECIMAL")
        if isinstance(value, (int, float)):
            return float(value)
    elif value_type == "TEXT":
        if isinstance(value, str):
            return value
    elif value_type == "TIMESTAMP":
        if isinstance(value, str) and _TS_RE.match(value):
            return value
    raise ValueError(f"{value!r} does not conform to {value_type}")


def coerce_text_value(text: str, value_type: str):
    """Coerce a delimited-file cell (always text) to a field type."""
    if value_type == "TEXT":
        return text
    if value_type == "BOOLEAN":
        if text == "true":
            return True
        if text == "false":
            return False
    elif value_type == "INTEGER":
        if _INT_RE.match(text):
            return int(text)
    elif value_type == "DECIMAL":
        if _INT_RE.match(text) or _DEC_RE.match(text):
            return float(text)
    elif value_type == "TIMESTAMP":
        if _TS_RE.match(text):
            return text
    raise ValueError(f"{text!r} does not conform to {value_type}")


def convert_widened(value: object, to_type: str):
    """Value-preserving conversion used by type widening."""
    if value is None:
        return None
    if to_type == "DECIMAL":
        return float(value)
    if to_type == "TEXT":
        return value_to_text(value)
    return value


def canonical_json_bytes(obj: object) -> bytes:
    """The bit-exact serialization used for the metadata document."""
    return (json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8")


def ndjson_line(record: dict) -> str:
    """One newline-delimited JSON record; key order is preserved (schema order)."""
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))
