"""Source wrappers: batch parsing, schema inference, structural-change detection.

Wrappers are pure copiers plus observers: the bytes land at level 0 exactly
as received, and everything derived here (parsed records, inferred field
types, change records) is computed from those bytes without altering them.
"""

from __future__ import annotations

import csv
import io
import json

from .errors import EngineError
from .model import DatasetSchema, FieldDef, SourceDescriptor
from .values import infer_cell_type, infer_json_type, lub


def _parse_error(msg: str) -> EngineError:
    return EngineError("PARSE_ERROR", msg)


def parse_delimited(data: bytes, delimiter: str) -> list[dict]:
    """Parse a delimited batch; the first line is a mandatory header.

    Cell values stay text ("" reads as null); rows shorter than the header
    leave the trailing fields null, longer rows are malformed.
    """
    if not data:
        return []
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise _parse_error(f"batch is not UTF-8: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
    if not rows:
        return []
    header = rows[0]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise _parse_error(f"bad header row {header}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) > len(header):
            raise _parse_error(f"line {i} has {len(row)} cells for {len(header)} header fields")
        record = {}
        for j, name in enumerate(header):
            cell = row[j] if j < len(row) else ""
            record[name] = None if cell == "" else cell
        records.append(record)
    return records


def parse_json_records(data: bytes) -> list[dict]:
    """Parse newline-delimited JSON objects."""
    if not data:
        return []
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise _parse_error(f"batch is not UTF-8: {exc}") from exc
    records = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _parse_error(f"line {i} is not valid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise _parse_error(f"line {i} is not a JSON object")
        records.append(obj)
    return records


def parse_batch(descriptor: SourceDescriptor, data: bytes) -> list[dict]:
    if descriptor.format == "DELIMITED":
        return parse_delimited(data, descriptor.delimiter)
    if descriptor.format == "JSON_RECORDS":
        return parse_json_records(data)
    raise _parse_error(f"format {descriptor.format} has no record structure")


def raw_text_records(field_name: str, data: bytes) -> list[dict]:
    """RAW_TEXT batches feed ELT as one record per line."""
    if not data:
        return []
    text = data.decode("utf-8", errors="replace")
    return [{field_name: line} for line in text.splitlines()]


def infer_schema(records: list[dict], fmt: str) -> list[FieldDef]:
    """One FieldDef per observed column/key.

    The value type is the least upper bound over all observed values in the
    lattice NULL < BOOLEAN < INTEGER < DECIMAL < TEXT (TIMESTAMP recognized
    by ISO-8601 shape, widening to TEXT on conflict); a field observed with
    a null or missing value is nullable. Every record is scanned.
    """
    if fmt not in ("DELIMITED", "JSON_RECORDS"):
        raise EngineError("UNPARSEABLE", f"cannot infer a schema for format {fmt}")
    order: list[str] = []
    folded: dict[str, str] = {}
    nullable: dict[str, bool] = {}
    for record in records:
        for key, value in record.items():
            if key not in folded:
                order.append(key)
                folded[key] = "NULL"
                nullable[key] = False
            if value is None:
                nullable[key] = True
                continue
            observed = infer_cell_type(value) if fmt == "DELIMITED" else infer_json_type(value)
            if observed == "NULL":
                nullable[key] = True
            else:
                folded[key] = lub(folded[key], observed)
    for record in records:
        for key in order:
            if key not in record:
                nullable[key] = True
    return [
        FieldDef(key, folded[key] if folded[key] != "NULL" else "TEXT", nullable[key] or folded[key] == "NULL")
        for key in order
    ]


def detect_changes(inferred: list[FieldDef], registered: DatasetSchema) -> list[tuple[str, dict]]:
    """Diff an inferred field list against the registered schema.

    Returns (change_type, payload) pairs: ATTRIBUTE_REMOVED for registered
    fields not observed, ATTRIBUTE_ADDED for observed fields not registered,
    ATTRIBUTE_TYPE_CHANGED where the name matches but the type differs, and
    one RENAME_CANDIDATE per (removed, added) pair of equal value_type. The
    candidates are hints only; confirming a rename is the developer's call.
    """
    inferred_by_name = {f.name: f for f in inferred}
    registered_by_name = registered.field_map()

    removed = [f for f in registered.fields if f.name not in inferred_by_name]
    added = [f for f in inferred if f.name not in registered_by_name]

    changes: list[tuple[str, dict]] = []
    for f in removed:
        changes.append(("ATTRIBUTE_REMOVED", {"dataset": registered.dataset_id, "attribute": f.name}))
    for f in added:
        changes.append(
            (
                "ATTRIBUTE_ADDED",
                {
                    "dataset": registered.dataset_id,
                    "attribute": f.name,
                    "value_type": f.value_type,
                    "nullable": f.nullable,
                },
            )
        )
    for f in registered.fields:
        observed = inferred_by_name.get(f.name)
        if observed is not None and observed.value_type != f.value_type:
            changes.append(
                (
                    "ATTRIBUTE_TYPE_CHANGED",
                    {
                        "dataset": registered.dataset_id,
                        "attribute": f.name,
                        "old_type": f.value_type,
                        "new_type": observed.value_type,
                    },
                )
            )
    for gone in removed:
        for new in added:
            if gone.value_type == new.value_type:
                changes.append(
                    (
                        "RENAME_CANDIDATE",
                        {
                            "dataset": registered.dataset_id,
                            "from_attribute": gone.name,
                            "to_attribute": new.name,
                            "value_type": gone.value_type,
                        },
                    )
                )
    return changes
