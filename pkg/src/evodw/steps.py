"""ELT step interpreter: schema propagation, execution, and the star builder.

``propagate`` computes the field layout a step pipeline produces (and raises
MAPPING_INVALID on dangling references), ``run`` executes the same pipeline
over records. Keeping the two side by side is what lets the metastore reject
a mapping before any data moves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from . import expr
from .errors import EngineError
from .model import (
    AggMeasure,
    FieldDef,
    StarBundle,
    StarSpec,
    TransformStep,
)

NUMERIC_TYPES = ("INTEGER", "DECIMAL")


def _invalid(msg: str) -> EngineError:
    return EngineError("MAPPING_INVALID", msg)


def _mismatch(msg: str) -> EngineError:
    return EngineError("SCHEMA_MISMATCH", msg)


@dataclass(frozen=True)
class MappingShape:
    """Static output layout of a step pipeline."""

    output_fields: tuple[FieldDef, ...]
    star: Optional[StarSpec] = None
    dim_fields: dict = None  # dimension name -> tuple[FieldDef, ...]


def star_fact_fields(spec: StarSpec, input_fields: tuple[FieldDef, ...]) -> tuple[FieldDef, ...]:
    by_name = {f.name: f for f in input_fields}
    fields = [FieldDef(d.key_field, "INTEGER", False) for d in spec.dimensions]
    fields += [by_name[m] for m in spec.measures]
    return tuple(fields)


def star_dim_fields(spec: StarSpec, input_fields: tuple[FieldDef, ...]) -> dict[str, tuple[FieldDef, ...]]:
    by_name = {f.name: f for f in input_fields}
    return {
        d.name: (FieldDef(d.key_field, "INTEGER", False),) + tuple(by_name[a] for a in d.attributes)
        for d in spec.dimensions
    }


def _check_expression(source: str, fields: dict[str, FieldDef], where: str) -> None:
    try:
        referenced = expr.field_names(source)
    except EngineError as exc:
        raise _invalid(f"{where}: {exc.message}") from exc
    missing = sorted(referenced - fields.keys())
    if missing:
        raise _invalid(f"{where}: unknown field(s) {missing}")


def propagate_step(
    step: TransformStep,
    fields: tuple[FieldDef, ...],
    other_fields: Callable[[str], tuple[FieldDef, ...]],
) -> tuple[FieldDef, ...]:
    """Output layout of one non-LOAD_STAR step over ``fields``."""
    by_name = {f.name: f for f in fields}
    kind = step.kind

    if kind == "PROJECT":
        if len(set(step.fields)) != len(step.fields):
            raise _invalid(f"PROJECT lists a field twice: {list(step.fields)}")
        missing = [f for f in step.fields if f not in by_name]
        if missing:
            raise _invalid(f"PROJECT references unknown field(s) {missing}")
        return tuple(by_name[f] for f in step.fields)

    if kind == "RENAME":
        renames = dict(step.renames)
        missing = sorted(set(renames) - by_name.keys())
        if missing:
            raise _invalid(f"RENAME references unknown field(s) {missing}")
        out = []
        for f in fields:
            name = renames.get(f.name, f.name)
            out.append(FieldDef(name, f.value_type, f.nullable))
        names = [f.name for f in out]
        if len(set(names)) != len(names):
            raise _invalid(f"RENAME produces duplicate field names {names}")
        return tuple(out)

    if kind == "FILTER":
        _check_expression(step.predicate, by_name, "FILTER")
        return fields

    if kind == "DERIVE":
        _check_expression(step.expression, by_name, f"DERIVE {step.field_name!r}")
        if step.field_name in by_name:
            raise _invalid(f"DERIVE output {step.field_name!r} already exists")
        return fields + (FieldDef(step.field_name, step.value_type, step.nullable),)

    if kind == "EXTRACT":
        src = by_name.get(step.source_field)
        if src is None:
            raise _invalid(f"EXTRACT references unknown field {step.source_field!r}")
        if src.value_type != "TEXT":
            raise _invalid(f"EXTRACT needs a TEXT field, {step.source_field!r} is {src.value_type}")
        if step.field_name in by_name:
            raise _invalid(f"EXTRACT output {step.field_name!r} already exists")
        return fields + (FieldDef(step.field_name, "TEXT", True),)

    if kind == "JOIN":
        right = other_fields(step.dataset)
        right_by_name = {f.name: f for f in right}
        right_keys = set()
        for left_key, right_key in step.keys:
            if left_key not in by_name:
                raise _invalid(f"JOIN key {left_key!r} missing from left input")
            if right_key not in right_by_name:
                raise _invalid(f"JOIN key {right_key!r} missing from {step.dataset!r}")
            if by_name[left_key].value_type != right_by_name[right_key].value_type:
                raise _mismatch(
                    f"JOIN key types differ: {left_key}:{by_name[left_key].value_type} "
                    f"vs {right_key}:{right_by_name[right_key].value_type}"
                )
            right_keys.add(right_key)
        carried = [f for f in right if f.name not in right_keys]
        clash = sorted({f.name for f in carried} & by_name.keys())
        if clash:
            raise _invalid(f"JOIN would duplicate field(s) {clash}")
        if step.join_type == "LEFT":
            carried = [FieldDef(f.name, f.value_type, True) for f in carried]
        return fields + tuple(carried)

    if kind == "UNION":
        other = other_fields(step.dataset)
        if [f.name for f in other] != [f.name for f in fields] or [
            f.value_type for f in other
        ] != [f.value_type for f in fields]:
            raise _mismatch(
                f"UNION with {step.dataset!r} needs an identical layout: "
                f"{[f.name for f in fields]} vs {[f.name for f in other]}"
            )
        return tuple(
            FieldDef(a.name, a.value_type, a.nullable or b.nullable) for a, b in zip(fields, other)
        )

    if kind == "AGGREGATE":
        missing = [f for f in step.group_by if f not in by_name]
        if missing:
            raise _invalid(f"AGGREGATE groups by unknown field(s) {missing}")
        out = [by_name[f] for f in step.group_by]
        seen = set(step.group_by)
        for m in step.measures:
            if m.field not in by_name:
                raise _invalid(f"AGGREGATE measures unknown field {m.field!r}")
            in_type = by_name[m.field].value_type
            if m.fn in ("SUM", "AVG") and in_type not in NUMERIC_TYPES:
                raise _invalid(f"{m.fn} needs a numeric field, {m.field!r} is {in_type}")
            if m.name in seen:
                raise _invalid(f"AGGREGATE output name {m.name!r} is not unique")
            seen.add(m.name)
            if m.fn == "COUNT":
                out.append(FieldDef(m.name, "INTEGER", False))
            elif m.fn == "AVG":
                out.append(FieldDef(m.name, "DECIMAL", True))
            elif m.fn == "SUM":
                out.append(FieldDef(m.name, in_type, True))
            else:  # MIN / MAX
                out.append(FieldDef(m.name, in_type, True))
        return tuple(out)

    raise _invalid(f"cannot propagate step kind {step.kind!r}")


def propagate(
    steps: tuple[TransformStep, ...],
    input_fields: tuple[FieldDef, ...],
    other_fields: Callable[[str], tuple[FieldDef, ...]],
) -> MappingShape:
    """Layout produced by a whole pipeline; validates every reference."""
    fields = input_fields
    for i, step in enumerate(steps):
        if step.kind == "LOAD_STAR":
            if i != len(steps) - 1:
                raise _invalid("LOAD_STAR must be the final step")
            spec = step.star
            by_name = {f.name: f for f in fields}
            for m in spec.measures:
                if m not in by_name:
                    raise _invalid(f"star measure {m!r} missing from input")
                if by_name[m].value_type not in NUMERIC_TYPES:
                    raise _invalid(f"star measure {m!r} must be numeric")
            for d in spec.dimensions:
                missing = [a for a in d.attributes if a not in by_name]
                if missing:
                    raise _invalid(f"star dimension {d.name!r} references unknown field(s) {missing}")
                off_hierarchy = [a for a in d.hierarchy if a not in d.attributes]
                if off_hierarchy:
                    raise _invalid(f"hierarchy of {d.name!r} references non-attributes {off_hierarchy}")
            return MappingShape(star_fact_fields(spec, fields), spec, star_dim_fields(spec, fields))
        fields = propagate_step(step, fields, other_fields)
    return MappingShape(fields, None, {})


def run_step(
    step: TransformStep,
    records: list[dict],
    other_records: Callable[[str], list[dict]],
) -> list[dict]:
    """Execute one non-LOAD_STAR step."""
    kind = step.kind

    if kind == "PROJECT":
        return [{f: r[f] for f in step.fields} for r in records]

    if kind == "RENAME":
        renames = dict(step.renames)
        return [{renames.get(k, k): v for k, v in r.items()} for r in records]

    if kind == "FILTER":
        out = []
        for r in records:
            v = expr.evaluate(step.predicate, r)
            if v is None or v is False:
                continue
            if v is not True:
                raise EngineError("TYPE_ERROR", f"FILTER predicate yielded {v!r}, expected boolean")
            out.append(r)
        return out

    if kind == "DERIVE":
        out = []
        for r in records:
            v = expr.evaluate(step.expression, r)
            out.append({**r, step.field_name: _conform(v, step)})
        return out

    if kind == "EXTRACT":
        import re as _re

        pattern = _re.compile(step.pattern)
        out = []
        for r in records:
            text = r[step.source_field]
            value = None
            if text is not None:
                m = pattern.search(text)
                if m is not None:
                    value = m.group(step.group)
            out.append({**r, step.field_name: value})
        return out

    if kind == "JOIN":
        right_records = other_records(step.dataset)
        right_keys = [rk for _, rk in step.keys]
        left_keys = [lk for lk, _ in step.keys]
        index: dict[tuple, list[dict]] = {}
        for r in right_records:
            key = tuple(r[k] for k in right_keys)
            if any(v is None for v in key):
                continue  # null keys never match
            index.setdefault(key, []).append(r)
        out = []
        for left in records:
            key = tuple(left[k] for k in left_keys)
            matches = [] if any(v is None for v in key) else index.get(key, [])
            if matches:
                for right in matches:
                    merged = dict(left)
                    merged.update({k: v for k, v in right.items() if k not in right_keys})
                    out.append(merged)
            elif step.join_type == "LEFT":
                merged = dict(left)
                if right_records:
                    template = right_records[0]
                    merged.update({k: None for k in template if k not in right_keys})
                out.append(merged)
        return out

    if kind == "UNION":
        other = other_records(step.dataset)
        return list(records) + [dict(r) for r in other]

    if kind == "AGGREGATE":
        groups: dict[tuple, list[dict]] = {}
        for r in records:
            key = tuple(r[f] for f in step.group_by)
            groups.setdefault(key, []).append(r)
        out = []
        for key, members in groups.items():
            row = dict(zip(step.group_by, key))
            for m in step.measures:
                row[m.name] = _aggregate_value(m, members)
            out.append(row)
        return out

    raise _invalid(f"cannot run step kind {step.kind!r}")


def _conform(value, step: TransformStep):
    """DERIVE output must respect its declared type."""
    if value is None:
        if not step.nullable:
            raise EngineError("TYPE_ERROR", f"DERIVE {step.field_name!r} yielded null but is non-nullable")
        return None
    vt = step.value_type
    if vt == "INTEGER":
        if isinstance(value, bool) or not isinstance(value, int):
            raise EngineError("TYPE_ERROR", f"DERIVE {step.field_name!r} yielded {value!r}, expected INTEGER")
        return value
    if vt == "DECIMAL":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise EngineError("TYPE_ERROR", f"DERIVE {step.field_name!r} yielded {value!r}, expected DECIMAL")
        return float(value)
    if vt == "BOOLEAN":
        if not isinstance(value, bool):
            raise EngineError("TYPE_ERROR", f"DERIVE {step.field_name!r} yielded {value!r}, expected BOOLEAN")
        return value
    if not isinstance(value, str):
        raise EngineError("TYPE_ERROR", f"DERIVE {step.field_name!r} yielded {value!r}, expected {vt}")
    return value


def _aggregate_value(measure: AggMeasure, members: list[dict]):
    present = [r[measure.field] for r in members if r[measure.field] is not None]
    fn = measure.fn
    if fn == "COUNT":
        return len(present)
    if not present:
        return None
    if fn == "SUM":
        return sum(present)
    if fn == "MIN":
        return min(present)
    if fn == "MAX":
        return max(present)
    # AVG
    return sum(present) / len(present)


def run(
    steps: tuple[TransformStep, ...],
    records: list[dict],
    other_records: Callable[[str], list[dict]],
) -> list[dict] | StarBundle:
    """Execute a whole pipeline; a trailing LOAD_STAR yields a StarBundle."""
    for step in steps:
        if step.kind == "LOAD_STAR":
            return build_star(step.star, records)
        records = run_step(step, records, other_records)
    return records


def build_star(spec: StarSpec, records: list[dict]) -> StarBundle:
    """Split flat records into dimension tables plus a fact table.

    Surrogate keys are dense integers assigned in first-occurrence order of
    each distinct natural key; conflicting non-key attribute values keep the
    first-seen value.
    """
    bundle = StarBundle(spec=spec)
    key_maps: dict[str, dict[tuple, int]] = {d.name: {} for d in spec.dimensions}
    for d in spec.dimensions:
        bundle.dimensions[d.name] = []

    for r in records:
        fact_row: dict = {}
        for d in spec.dimensions:
            natural = tuple(r[k] for k in d.natural_key)
            known = key_maps[d.name]
            sk = known.get(natural)
            if sk is None:
                sk = len(known) + 1
                known[natural] = sk
                dim_row = {d.key_field: sk}
                dim_row.update({a: r[a] for a in d.attributes})
                bundle.dimensions[d.name].append(dim_row)
            fact_row[d.key_field] = sk
        for m in spec.measures:
            fact_row[m] = r[m]
        bundle.fact_rows.append(fact_row)
    return bundle


def join_star(bundle: StarBundle) -> list[dict]:
    """Re-flatten a star (fact joined to dimensions via surrogate keys)."""
    dim_index: dict[str, dict[int, dict]] = {}
    for d in bundle.spec.dimensions:
        dim_index[d.name] = {row[d.key_field]: row for row in bundle.dimensions[d.name]}
    out = []
    for fact in bundle.fact_rows:
        flat: dict = {}
        for d in bundle.spec.dimensions:
            dim_row = dim_index[d.name][fact[d.key_field]]
            for a in d.attributes:
                flat[a] = dim_row[a]
        for m in bundle.spec.measures:
            flat[m] = fact[m]
        out.append(flat)
    return out
