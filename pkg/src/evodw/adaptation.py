"""Adaptation: generate options for a source change, preview impact, apply one.

Every option kind is compiled to a Plan against a cloned metastore before
anything mutates: the clone receives all structural edits (new schema and
mapping versions, star/cube definition updates) and the plan lists the data
migrations the engine must run afterwards. Apply then swaps the clone in
atomically; preview just renders the plan and throws the clone away.

Field propagation follows mapping edges level by level. A new field is
carried through PROJECT steps by extension and dies at AGGREGATE, UNION and
LOAD_STAR boundaries (carrying it further would change pre-existing query
results). Removals and renames cascade the same way, rewriting step
references as they go.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field, replace

from . import expr, model, steps
from .errors import EngineError
from .metastore import MetaStore
from .model import (
    CubeDefinition,
    DatasetSchema,
    DimensionAttr,
    FieldDef,
    MappingDefinition,
    PotentialChange,
    SourceChangeRecord,
    StarDimension,
    StarSpec,
    TransformStep,
)
from .values import coerce_json_value, widen


def _fail(msg: str) -> EngineError:
    return EngineError("APPLY_FAILED", msg)


@dataclass
class Plan:
    option_kind: str
    staged: MetaStore
    schema_deltas: list = dc_field(default_factory=list)
    mapping_deltas: list = dc_field(default_factory=list)
    affected_cubes: list = dc_field(default_factory=list)
    required_parameters: list = dc_field(default_factory=list)
    # dataset -> [{"op": "rename"|"convert", ...}]; every listed dataset is
    # reshaped to its new schema after the ops run.
    migrations: dict = dc_field(default_factory=dict)
    star_reruns: list = dc_field(default_factory=list)      # mapping ids
    cube_rebuilds: list = dc_field(default_factory=list)    # cube ids
    cube_deletions: list = dc_field(default_factory=list)   # cube ids
    dataset_removals: list = dc_field(default_factory=list)  # stored files go away

    def impact_report(self) -> dict:
        return {
            "affected_schemas": self.schema_deltas,
            "affected_mappings": self.mapping_deltas,
            "affected_cubes": sorted(set(self.affected_cubes) | set(self.cube_rebuilds) | set(self.cube_deletions)),
            "required_parameters": self.required_parameters,
        }


def clone_store(store: MetaStore) -> MetaStore:
    fresh = MetaStore()
    fresh.import_document(json.loads(store.export_bytes()))
    return fresh


# -- proposal --------------------------------------------------------------


def propose(store: MetaStore, change_id: str) -> list[PotentialChange]:
    record = store.get_change(change_id)
    if record.status == "RESOLVED":
        raise EngineError("ALREADY_RESOLVED", f"change {change_id} is already resolved")
    live = [p for p in store.options_for_change(change_id) if p.status in ("PROPOSED", "CHOSEN")]
    if live:
        return live  # idempotent: one live proposal set per change
    rule = store.rules_for(record.change_type)
    compatible = model.KIND_COMPATIBILITY[record.change_type]
    created = []
    for kind in rule.option_kinds:
        if kind not in compatible:
            continue
        pc = PotentialChange(
            pc_id=store.next_id("pc"),
            change_id=change_id,
            option_kind=kind,
            parameters={},
            status="PROPOSED",
            status_history=(model.HistoryEntry("PROPOSED", store.now(), "system"),),
        )
        store.add_potential_change(pc)
        created.append(pc)
    return created


# -- context & parameters ----------------------------------------------------


def change_context(store: MetaStore, pc: PotentialChange, supplied: dict | None = None) -> dict:
    """What the change is about: dataset, attribute, types. Detected changes
    carry this in their payload; developer-initiated ones supply it as
    parameters."""
    ctx: dict = {}
    if pc.change_id is not None:
        record = store.get_change(pc.change_id)
        ctx.update(record.payload)
        if "dataset" not in ctx:
            ctx["dataset"] = store.get_source(record.source_id).level0_dataset
    ctx.update(pc.parameters)
    ctx.update(supplied or {})
    if "dataset" not in ctx:
        raise EngineError("MISSING_PARAMETER", "developer-initiated changes need a 'dataset' parameter")
    return ctx


def required_parameters(store: MetaStore, pc: PotentialChange) -> list[dict]:
    kind = pc.option_kind
    if kind == "MAP_WITH_DEFAULT":
        ctx = change_context(store, pc)
        value_type = "TEXT"
        try:
            schema = store.get_schema(ctx["dataset"])
            for f in schema.fields:
                if f.name == ctx.get("attribute"):
                    value_type = f.value_type
        except EngineError:
            pass
        return [
            {
                "name": "default",
                "type": value_type,
                "description": "value substituted where the source no longer supplies the field",
                "required": True,
            }
        ]
    if kind == "RENAME_CONFIRM":
        return [
            {
                "name": "confirm",
                "type": "BOOLEAN",
                "description": "confirm that the removed/added pair really is a rename",
                "required": True,
            }
        ]
    if kind == "TYPE_WIDEN":
        return [
            {
                "name": "conversion",
                "type": "TEXT",
                "description": "optional expression converting stored values (default: plain widening)",
                "required": False,
            }
        ]
    if kind == "NEW_DIMENSION":
        return [
            {"name": "dimension", "type": "TEXT", "description": "name of the new dimension", "required": True},
            {
                "name": "natural_key",
                "type": "TEXT",
                "description": "natural key of the new dimension (the new attribute itself)",
                "required": True,
            },
        ]
    return []


def _check_parameters(store: MetaStore, pc: PotentialChange, ctx: dict, params: dict, specs: list[dict]) -> None:
    for spec in specs:
        if spec["required"] and params.get(spec["name"]) is None:
            raise EngineError("MISSING_PARAMETER", f"parameter {spec['name']!r} is required")
    kind = pc.option_kind
    if kind == "MAP_WITH_DEFAULT":
        try:
            coerce_json_value(params["default"], specs[0]["type"])
        except ValueError as exc:
            raise EngineError("INVALID_PARAMETER", f"default: {exc}") from exc
    elif kind == "RENAME_CONFIRM":
        if params["confirm"] is not True:
            raise EngineError("INVALID_PARAMETER", "confirm must be true")
    elif kind == "NEW_DIMENSION":
        if not isinstance(params["dimension"], str) or not params["dimension"]:
            raise EngineError("INVALID_PARAMETER", "dimension must be a non-empty name")
        if params["natural_key"] != ctx.get("attribute"):
            raise EngineError(
                "INVALID_PARAMETER",
                "a single-attribute dimension must use the new attribute as its natural key",
            )
    elif kind == "TYPE_WIDEN" and params.get("conversion") is not None:
        try:
            expr.parse(params["conversion"])
        except EngineError as exc:
            raise EngineError("INVALID_PARAMETER", f"conversion: {exc.message}") from exc


# -- plan construction -------------------------------------------------------


def build_plan(store: MetaStore, pc_id: str, supplied: dict | None = None, for_apply: bool = False) -> Plan:
    pc = store.get_potential_change(pc_id)
    if for_apply and pc.status not in ("PROPOSED", "CHOSEN"):
        raise EngineError("ILLEGAL_TRANSITION", f"cannot apply a {pc.status} option")
    specs = required_parameters(store, pc)
    ctx = change_context(store, pc, supplied)
    params = dict(pc.parameters)
    params.update(supplied or {})
    if for_apply:
        _check_parameters(store, pc, ctx, params, specs)
    else:
        params = _with_placeholders(params, specs)

    staged = clone_store(store)
    plan = Plan(option_kind=pc.option_kind, staged=staged, required_parameters=specs)
    kind = pc.option_kind

    if kind == "IGNORE":
        pass
    elif kind == "PROPAGATE_ADD":
        _plan_propagate_add(plan, ctx, new_dimension=None)
    elif kind == "NEW_DIMENSION":
        _plan_propagate_add(plan, ctx, new_dimension=params)
    elif kind == "MAP_WITH_DEFAULT":
        _plan_map_with_default(plan, ctx, params)
    elif kind == "DROP_TARGET":
        if (pc.change_id is not None and store.get_change(pc.change_id).change_type == "DATASET_REMOVED") or (
            pc.change_id is None and "attribute" not in ctx
        ):
            _plan_drop_dataset(plan, ctx)
        else:
            _plan_drop_attribute(plan, ctx)
    elif kind == "RENAME_CONFIRM":
        _plan_rename(plan, ctx)
    elif kind == "TYPE_WIDEN":
        _plan_type_widen(plan, ctx, params.get("conversion"))
    else:
        raise _fail(f"option kind {kind} is not implemented")

    if kind != "IGNORE":
        problems = staged.validate()
        if problems:
            raise _fail("applying would break integrity: " + "; ".join(problems))
    return plan


def _with_placeholders(params: dict, specs: list[dict]) -> dict:
    """Previews run the full planner without developer input."""
    fillers = {"BOOLEAN": True, "INTEGER": 0, "DECIMAL": 0.0, "TEXT": "", "TIMESTAMP": "1970-01-01"}
    out = dict(params)
    for spec in specs:
        if spec["name"] not in out:
            if spec["name"] == "dimension":
                out[spec["name"]] = "new_dimension"
            elif spec["name"] != "conversion":
                out[spec["name"]] = fillers[spec["type"]]
    return out


# -- helpers shared by the planners ------------------------------------------


def _bump_schema(staged: MetaStore, dataset_id: str, new_fields: tuple[FieldDef, ...]) -> bool:
    old = staged.get_schema(dataset_id)
    if [f.to_doc() for f in old.fields] == [f.to_doc() for f in new_fields]:
        return False
    staged.schemas[dataset_id].append(
        DatasetSchema(dataset_id, old.level, tuple(new_fields), old.version + 1, old.kind)
    )
    return True


def _bump_mapping(staged: MetaStore, mapping: MappingDefinition, new_steps: tuple[TransformStep, ...]) -> bool:
    if [s.to_doc() for s in new_steps] == [s.to_doc() for s in mapping.steps]:
        return False
    staged.mappings[mapping.mapping_id].append(
        replace(mapping, steps=tuple(new_steps), version=mapping.version + 1)
    )
    return True


def _mappings_by_level(staged: MetaStore) -> list[tuple[int, MappingDefinition]]:
    pairs = []
    for mapping in staged.current_mappings():
        pairs.append((staged.get_schema(mapping.target_dataset).level, mapping))
    pairs.sort(key=lambda p: (p[0], p[1].mapping_id))
    return pairs


def _other_fields_fn(staged: MetaStore):
    return lambda ds: staged.get_schema(ds).fields


def _star_spec_of(staged: MetaStore, fact_dataset: str) -> StarSpec | None:
    for mapping in staged.mappings_for_target(fact_dataset):
        if mapping.steps and mapping.steps[-1].kind == "LOAD_STAR":
            return mapping.steps[-1].star
    return None


def _cubes_on_fact(staged: MetaStore, fact_dataset: str) -> list[CubeDefinition]:
    return [c for c in staged.cube_defs.values() if c.fact_dataset == fact_dataset]


def _migration(plan: Plan, staged: MetaStore, dataset_id: str, op: dict | None = None) -> None:
    if staged.get_schema(dataset_id).level == 0:
        return  # raw history is never rewritten
    ops = plan.migrations.setdefault(dataset_id, [])
    if op is not None:
        ops.append(op)


# -- PROPAGATE_ADD / NEW_DIMENSION -------------------------------------------


def _plan_propagate_add(plan: Plan, ctx: dict, new_dimension: dict | None) -> None:
    staged = plan.staged
    dataset_id = ctx["dataset"]
    attribute = ctx.get("attribute")
    if not attribute:
        raise _fail("this change carries no attribute to propagate")
    added = FieldDef(attribute, ctx.get("value_type", "TEXT"), True)  # nullable for backfill

    schema = staged.get_schema(dataset_id)
    if attribute in schema.field_names():
        raise _fail(f"{dataset_id} already has a field {attribute!r}")
    _bump_schema(staged, dataset_id, schema.fields + (added,))
    plan.schema_deltas.append(
        {
            "dataset_id": dataset_id,
            "deltas": [{"op": "add_field", "field": attribute, "value_type": added.value_type}],
        }
    )
    _migration(plan, staged, dataset_id)

    gaining = {dataset_id}
    reached_star = False
    for _, mapping in _mappings_by_level(staged):
        if not set(mapping.source_datasets) & gaining:
            continue
        result = _walk_add(staged, mapping, added, gaining, new_dimension)
        if result is None:
            continue
        new_steps, final_fields, deltas, star = result
        if _bump_mapping(staged, mapping, new_steps) and deltas:
            plan.mapping_deltas.append({"mapping_id": mapping.mapping_id, "deltas": deltas})
        target = mapping.target_dataset
        if star is not None:
            reached_star = True
            if _bump_schema(staged, target, final_fields):
                plan.schema_deltas.append(
                    {
                        "dataset_id": target,
                        "deltas": [{"op": "add_field", "field": f"{new_dimension['dimension']}_key", "value_type": "INTEGER"}],
                    }
                )
            plan.star_reruns.append(mapping.mapping_id)
            dim_attr = DimensionAttr(attribute, new_dimension["dimension"], 0)
            for cube_def in _cubes_on_fact(staged, target):
                staged.cube_defs[cube_def.cube_id] = replace(
                    cube_def, dimension_attrs=cube_def.dimension_attrs + (dim_attr,)
                )
                plan.cube_rebuilds.append(cube_def.cube_id)
        elif any(f.name == attribute for f in final_fields):
            if _bump_schema(staged, target, final_fields):
                plan.schema_deltas.append(
                    {
                        "dataset_id": target,
                        "deltas": [{"op": "add_field", "field": attribute, "value_type": added.value_type}],
                    }
                )
                _migration(plan, staged, target)
            gaining.add(target)
    if new_dimension is not None and not reached_star:
        raise _fail(f"field {attribute!r} does not reach any star mapping; NEW_DIMENSION is not applicable")


def _walk_add(staged, mapping, added: FieldDef, gaining: set[str], new_dimension: dict | None):
    """Rewrite one mapping so the new field flows through it.

    Returns (steps, final_fields, deltas, star_spec_or_None); None when the
    mapping is not touched by the change at all.
    """
    other = _other_fields_fn(staged)
    layout = staged.get_schema(mapping.source_datasets[0]).fields
    name = added.name
    new_steps: list[TransformStep] = []
    deltas: list[dict] = []

    for step in mapping.steps:
        present = any(f.name == name for f in layout)
        if step.kind == "PROJECT" and present and name not in step.fields:
            step = model.project(*step.fields, name)
            deltas.append({"op": "extend_project", "field": name})
        elif step.kind in ("DERIVE", "EXTRACT") and step.field_name == name and present:
            raise _fail(f"{mapping.mapping_id}: {step.kind} output collides with new field {name!r}")
        elif step.kind == "JOIN":
            right_has = any(f.name == name for f in other(step.dataset))
            if right_has and present:
                raise _fail(f"{mapping.mapping_id}: new field {name!r} would collide at JOIN")
        elif step.kind == "UNION":
            other_has = any(f.name == name for f in other(step.dataset))
            if present and not other_has:
                # The other branch cannot gain the field; drop it before the
                # union to keep both layouts identical.
                keep = model.project(*[f.name for f in layout if f.name != name])
                new_steps.append(keep)
                layout = steps.propagate_step(keep, layout, other)
                deltas.append({"op": "drop_before_union", "field": name, "dataset": step.dataset})
            elif other_has and not present:
                raise _fail(
                    f"{mapping.mapping_id}: UNION branch {step.dataset!r} gains {name!r} "
                    "but the main pipeline does not"
                )
        elif step.kind == "LOAD_STAR":
            spec = step.star
            if new_dimension is not None and present:
                dim_name = new_dimension["dimension"]
                if any(d.name == dim_name for d in spec.dimensions):
                    raise _fail(f"star already has a dimension {dim_name!r}")
                dim = StarDimension(dim_name, (name,), (name,), (name,))
                spec = StarSpec(spec.fact, spec.measures, spec.dimensions + (dim,))
                step = model.load_star(spec)
                deltas.append({"op": "extend_star", "dimension": dim_name, "attribute": name})
            new_steps.append(step)
            return tuple(new_steps), steps.star_fact_fields(spec, layout), deltas, (
                spec if new_dimension is not None and present else None
            )
        try:
            layout = steps.propagate_step(step, layout, other)
        except EngineError as exc:
            raise _fail(f"{mapping.mapping_id}: {exc.message}") from exc
        new_steps.append(step)
    return tuple(new_steps), layout, deltas, None


# -- MAP_WITH_DEFAULT ---------------------------------------------------------


def _plan_map_with_default(plan: Plan, ctx: dict, params: dict) -> None:
    staged = plan.staged
    dataset_id = ctx["dataset"]
    attribute = ctx.get("attribute")
    if not attribute:
        raise _fail("MAP_WITH_DEFAULT needs an attribute-level change")
    schema = staged.get_schema(dataset_id)
    by_name = schema.field_map()
    if attribute not in by_name:
        raise _fail(f"{dataset_id} has no field {attribute!r}")
    original = by_name[attribute]
    default = coerce_json_value(params["default"], original.value_type)

    if not original.nullable:
        relaxed = tuple(
            FieldDef(f.name, f.value_type, True) if f.name == attribute else f for f in schema.fields
        )
        _bump_schema(staged, dataset_id, relaxed)
    plan.schema_deltas.append(
        {"dataset_id": dataset_id, "deltas": [{"op": "make_nullable", "field": attribute}]}
    )

    for mapping in staged.mappings_consuming(dataset_id):
        new_steps, injected = _inject_default(staged, mapping, dataset_id, attribute, original, default)
        if injected and _bump_mapping(staged, mapping, new_steps):
            plan.mapping_deltas.append(
                {
                    "mapping_id": mapping.mapping_id,
                    "deltas": [{"op": "inject_default", "field": attribute, "default": default}],
                }
            )


def _inject_default(staged, mapping, dataset_id, attribute, original: FieldDef, default):
    """Splice RENAME/DERIVE/PROJECT right after the changed dataset enters the
    pipeline so every later reference sees coalesce(old value, default)."""
    other = _other_fields_fn(staged)
    head = mapping.source_datasets[0]

    entry_index = 0
    if head != dataset_id:
        entry_index = None
        for i, step in enumerate(mapping.steps):
            if step.kind in ("JOIN", "UNION") and step.dataset == dataset_id:
                if step.kind == "JOIN" and any(rk == attribute for _, rk in step.keys):
                    raise _fail(
                        f"{mapping.mapping_id}: {attribute!r} is a JOIN key of {dataset_id!r}; "
                        "a default cannot stand in for a join key on the joined side"
                    )
                entry_index = i + 1
                break
        if entry_index is None:
            return mapping.steps, False

    layout = staged.get_schema(head).fields
    for step in mapping.steps[:entry_index]:
        layout = steps.propagate_step(step, layout, other)
    if not any(f.name == attribute for f in layout):
        return mapping.steps, False

    shadow = f"__{attribute}_raw"
    if any(f.name == shadow for f in layout):
        raise _fail(f"{mapping.mapping_id}: shadow name {shadow!r} is taken")
    injected = (
        model.rename(**{attribute: shadow}),
        model.derive(
            attribute,
            f"coalesce({shadow}, {expr.literal(default)})",
            original.value_type,
            nullable=original.nullable,
        ),
        model.project(*[f.name for f in layout]),
    )
    new_steps = mapping.steps[:entry_index] + injected + mapping.steps[entry_index:]
    return new_steps, True


# -- RENAME_CONFIRM -----------------------------------------------------------


def _plan_rename(plan: Plan, ctx: dict) -> None:
    staged = plan.staged
    dataset_id = ctx["dataset"]
    old_name = ctx.get("from_attribute")
    new_name = ctx.get("to_attribute")
    if not old_name or not new_name:
        raise _fail("RENAME_CONFIRM needs from_attribute and to_attribute")

    renamed: dict[str, tuple[str, str]] = {}
    _rename_in_schema(plan, staged, dataset_id, old_name, new_name)
    renamed[dataset_id] = (old_name, new_name)

    for _, mapping in _mappings_by_level(staged):
        if not set(mapping.source_datasets) & renamed.keys():
            continue
        result = _walk_rename(staged, mapping, renamed)
        if result is None:
            continue
        new_steps, final_fields, deltas, star_changed = result
        if _bump_mapping(staged, mapping, new_steps) and deltas:
            plan.mapping_deltas.append({"mapping_id": mapping.mapping_id, "deltas": deltas})
        target = mapping.target_dataset
        old_target = staged.get_schema(target)
        if star_changed:
            plan.star_reruns.append(mapping.mapping_id)
            renames = _field_renames(old_target.fields, final_fields)
            if _bump_schema(staged, target, final_fields):
                for a, b in renames:
                    plan.schema_deltas.append(
                        {"dataset_id": target, "deltas": [{"op": "rename_field", "from": a, "to": b}]}
                    )
            _rename_cube_refs(plan, staged, target, renamed)
        else:
            renames = _field_renames(old_target.fields, final_fields)
            if renames:
                _bump_schema(staged, target, final_fields)
                for a, b in renames:
                    plan.schema_deltas.append(
                        {"dataset_id": target, "deltas": [{"op": "rename_field", "from": a, "to": b}]}
                    )
                    _migration(plan, staged, target, {"op": "rename", "from": a, "to": b})
                    renamed[target] = (a, b)


def _rename_in_schema(plan: Plan, staged: MetaStore, dataset_id: str, old_name: str, new_name: str) -> None:
    schema = staged.get_schema(dataset_id)
    by_name = schema.field_map()
    if old_name not in by_name:
        raise _fail(f"{dataset_id} has no field {old_name!r}")
    if new_name in by_name:
        raise _fail(f"{dataset_id} already has a field {new_name!r}")
    fields = tuple(
        FieldDef(new_name, f.value_type, f.nullable) if f.name == old_name else f for f in schema.fields
    )
    _bump_schema(staged, dataset_id, fields)
    plan.schema_deltas.append(
        {"dataset_id": dataset_id, "deltas": [{"op": "rename_field", "from": old_name, "to": new_name}]}
    )
    if schema.level >= 1:
        _migration(plan, staged, dataset_id, {"op": "rename", "from": old_name, "to": new_name})


def _field_renames(old_fields, new_fields) -> list[tuple[str, str]]:
    out = []
    for a, b in zip(old_fields, new_fields):
        if a.name != b.name:
            out.append((a.name, b.name))
    return out


def _rename_cube_refs(plan: Plan, staged: MetaStore, fact_dataset: str, renamed: dict) -> None:
    pairs = dict(renamed.values())  # old -> new (attribute names)
    for cube_def in _cubes_on_fact(staged, fact_dataset):
        attrs = tuple(
            replace(a, attribute=pairs.get(a.attribute, a.attribute)) for a in cube_def.dimension_attrs
        )
        measures = tuple(replace(m, field=pairs.get(m.field, m.field)) for m in cube_def.measures)
        explicit = tuple(tuple(pairs.get(a, a) for a in combo) for combo in cube_def.explicit_cuboids)
        if (attrs, measures, explicit) != (
            cube_def.dimension_attrs,
            cube_def.measures,
            cube_def.explicit_cuboids,
        ):
            staged.cube_defs[cube_def.cube_id] = replace(
                cube_def, dimension_attrs=attrs, measures=measures, explicit_cuboids=explicit
            )
            _rename_cuboid_catalog(staged, cube_def.cube_id, pairs)
            plan.cube_rebuilds.append(cube_def.cube_id)


def _rename_cuboid_catalog(staged: MetaStore, cube_id: str, pairs: dict[str, str]) -> None:
    for meta in staged.cuboids_for(cube_id):
        attrs = tuple(sorted(pairs.get(a, a) for a in meta.attrs))
        if attrs == meta.attrs:
            continue
        del staged.cuboids[(cube_id, meta.attrs)]
        key = "+".join(attrs) if attrs else "apex"
        staged.set_cuboid(
            replace(meta, attrs=attrs, path=f"cubes/{cube_id}/{key}.ndjson")
        )


def _walk_rename(staged, mapping, renamed: dict[str, tuple[str, str]]):
    """Rewrite stale field references in one mapping after a source rename."""
    other = _other_fields_fn(staged)
    layout = staged.get_schema(mapping.source_datasets[0]).fields
    rewrite: dict[str, str] = {}
    if mapping.source_datasets[0] in renamed:
        old, new = renamed[mapping.source_datasets[0]]
        rewrite[old] = new

    new_steps: list[TransformStep] = []
    deltas: list[dict] = []
    star_changed = False

    for step in mapping.steps:
        if step.kind == "JOIN" and step.dataset in renamed:
            old, new = renamed[step.dataset]
            keys = tuple((lk, new if rk == old else rk) for lk, rk in step.keys)
            if keys != step.keys:
                deltas.append({"op": "rewrite_references", "from": old, "to": new})
            step = replace(step, keys=keys)
            rewrite[old] = new  # carried right-side fields flow under the new name
        step2 = _rewrite_step(step, rewrite)
        if step2 is not step:
            pair = next(iter(rewrite.items()))
            deltas.append({"op": "rewrite_references", "from": pair[0], "to": pair[1]})
        if step2.kind == "RENAME":
            for old_key, out_name in step2.renames:
                for stale, current in list(rewrite.items()):
                    if old_key == current:
                        del rewrite[stale]  # lineage renamed away; later refs use out_name
        if step2.kind == "LOAD_STAR":
            star_changed = step2.to_doc() != step.to_doc()
            new_steps.append(step2)
            return tuple(new_steps), steps.star_fact_fields(step2.star, layout), deltas, star_changed
        try:
            layout = steps.propagate_step(step2, layout, other)
        except EngineError as exc:
            raise _fail(f"{mapping.mapping_id}: {exc.message}") from exc
        new_steps.append(step2)
        names = {f.name for f in layout}
        for stale, current in list(rewrite.items()):
            if current not in names:
                del rewrite[stale]
    return tuple(new_steps), layout, deltas, star_changed


def _rewrite_step(step: TransformStep, rewrite: dict[str, str]) -> TransformStep:
    if not rewrite:
        return step
    k = step.kind
    if k == "PROJECT":
        fields = tuple(rewrite.get(f, f) for f in step.fields)
        return step if fields == step.fields else replace(step, fields=fields)
    if k == "RENAME":
        renames = tuple((rewrite.get(old, old), new) for old, new in step.renames)
        return step if renames == step.renames else replace(step, renames=renames)
    if k == "FILTER":
        text = expr.rename_fields(step.predicate, rewrite)
        return step if text == step.predicate else replace(step, predicate=text)
    if k == "DERIVE":
        text = expr.rename_fields(step.expression, rewrite)
        return step if text == step.expression else replace(step, expression=text)
    if k == "EXTRACT":
        src = rewrite.get(step.source_field, step.source_field)
        return step if src == step.source_field else replace(step, source_field=src)
    if k == "JOIN":
        keys = tuple((rewrite.get(lk, lk), rk) for lk, rk in step.keys)
        return step if keys == step.keys else replace(step, keys=keys)
    if k == "AGGREGATE":
        group_by = tuple(rewrite.get(g, g) for g in step.group_by)
        measures = tuple(replace(m, field=rewrite.get(m.field, m.field)) for m in step.measures)
        if group_by == step.group_by and measures == step.measures:
            return step
        return replace(step, group_by=group_by, measures=measures)
    if k == "LOAD_STAR":
        spec = step.star
        dims = tuple(
            StarDimension(
                d.name,
                tuple(rewrite.get(a, a) for a in d.natural_key),
                tuple(rewrite.get(a, a) for a in d.attributes),
                tuple(rewrite.get(a, a) for a in d.hierarchy),
            )
            for d in spec.dimensions
        )
        measures = tuple(rewrite.get(m, m) for m in spec.measures)
        new_spec = StarSpec(spec.fact, measures, dims)
        return step if new_spec.to_doc() == spec.to_doc() else model.load_star(new_spec)
    return step


# -- DROP_TARGET ----------------------------------------------------------------


def _plan_drop_attribute(plan: Plan, ctx: dict) -> None:
    staged = plan.staged
    dataset_id = ctx["dataset"]
    attribute = ctx.get("attribute")
    if not attribute:
        raise _fail("DROP_TARGET on an attribute change needs an attribute")
    schema = staged.get_schema(dataset_id)
    if attribute not in schema.field_names():
        raise _fail(f"{dataset_id} has no field {attribute!r}")
    _bump_schema(staged, dataset_id, tuple(f for f in schema.fields if f.name != attribute))
    plan.schema_deltas.append(
        {"dataset_id": dataset_id, "deltas": [{"op": "drop_field", "field": attribute}]}
    )
    _migration(plan, staged, dataset_id)

    dropping: dict[str, set[str]] = {dataset_id: {attribute}}
    for _, mapping in _mappings_by_level(staged):
        if not set(mapping.source_datasets) & dropping.keys():
            continue
        result = _walk_drop(staged, mapping, dropping)
        if result is None:
            continue
        new_steps, final_fields, deltas, star_changed = result
        if _bump_mapping(staged, mapping, new_steps) and deltas:
            plan.mapping_deltas.append({"mapping_id": mapping.mapping_id, "deltas": deltas})
        target = mapping.target_dataset
        old_target = staged.get_schema(target)
        gone = {f.name for f in old_target.fields} - {f.name for f in final_fields}
        if star_changed:
            plan.star_reruns.append(mapping.mapping_id)
            _bump_schema(staged, target, final_fields)
            if gone:
                plan.schema_deltas.append(
                    {"dataset_id": target, "deltas": [{"op": "drop_field", "field": g} for g in sorted(gone)]}
                )
            _drop_cube_refs(plan, staged, target)
        elif gone:
            _bump_schema(staged, target, final_fields)
            plan.schema_deltas.append(
                {"dataset_id": target, "deltas": [{"op": "drop_field", "field": g} for g in sorted(gone)]}
            )
            _migration(plan, staged, target)
            dropping[target] = gone


def _drop_cube_refs(plan: Plan, staged: MetaStore, fact_dataset: str) -> None:
    star = _star_spec_of(staged, fact_dataset)
    live_attrs = {a for d in star.dimensions for a in d.attributes} if star else set()
    live_measures = set(star.measures) if star else set()
    for cube_def in _cubes_on_fact(staged, fact_dataset):
        attrs = tuple(a for a in cube_def.dimension_attrs if a.attribute in live_attrs)
        measures = tuple(m for m in cube_def.measures if m.field in live_measures)
        keep_names = {a.attribute for a in attrs}
        explicit = tuple(c for c in cube_def.explicit_cuboids if set(c) <= keep_names)
        if not measures:
            del staged.cube_defs[cube_def.cube_id]
            staged.drop_cuboids(cube_def.cube_id)
            plan.cube_deletions.append(cube_def.cube_id)
        elif (attrs, measures, explicit) != (
            cube_def.dimension_attrs,
            cube_def.measures,
            cube_def.explicit_cuboids,
        ):
            staged.cube_defs[cube_def.cube_id] = replace(
                cube_def, dimension_attrs=attrs, measures=measures, explicit_cuboids=explicit
            )
            for meta in staged.cuboids_for(cube_def.cube_id):
                if not set(meta.attrs) <= keep_names:
                    del staged.cuboids[(cube_def.cube_id, meta.attrs)]
            plan.cube_rebuilds.append(cube_def.cube_id)


def _walk_drop(staged, mapping, dropping: dict[str, set[str]]):
    """Remove every reference to dropped fields from one mapping; DERIVE and
    EXTRACT steps that consumed them are dropped and their outputs cascade."""
    other = _other_fields_fn(staged)
    head = mapping.source_datasets[0]
    layout = staged.get_schema(head).fields
    dead: set[str] = set(dropping.get(head, ()))

    new_steps: list[TransformStep] = []
    deltas: list[dict] = []
    star_changed = False

    for step in mapping.steps:
        k = step.kind
        if k == "PROJECT":
            fields = tuple(f for f in step.fields if f not in dead)
            if fields != step.fields:
                deltas.append({"op": "remove_references", "fields": sorted(set(step.fields) - set(fields))})
                step = replace(step, fields=fields)
        elif k == "RENAME":
            renames = tuple((old, new) for old, new in step.renames if old not in dead)
            for old, new in step.renames:
                if old in dead:
                    dead.add(new)
            if renames != step.renames:
                deltas.append({"op": "remove_references", "fields": sorted({o for o, _ in step.renames} & dead)})
                step = replace(step, renames=renames)
        elif k == "FILTER":
            if expr.field_names(step.predicate) & dead:
                raise _fail(
                    f"{mapping.mapping_id}: FILTER references dropped field(s) "
                    f"{sorted(expr.field_names(step.predicate) & dead)}; removing it would change semantics"
                )
        elif k == "DERIVE":
            if expr.field_names(step.expression) & dead:
                dead.add(step.field_name)
                deltas.append({"op": "remove_step", "step": "DERIVE", "field": step.field_name})
                continue
        elif k == "EXTRACT":
            if step.source_field in dead:
                dead.add(step.field_name)
                deltas.append({"op": "remove_step", "step": "EXTRACT", "field": step.field_name})
                continue
        elif k == "JOIN":
            other_dead = dropping.get(step.dataset, set())
            for lk, rk in step.keys:
                if lk in dead or rk in other_dead:
                    raise _fail(f"{mapping.mapping_id}: JOIN key {lk}/{rk} is being dropped")
            dead |= other_dead
        elif k == "AGGREGATE":
            group_by = tuple(g for g in step.group_by if g not in dead)
            measures = tuple(m for m in step.measures if m.field not in dead)
            for m in step.measures:
                if m.field in dead:
                    dead.add(m.name)
            if not group_by and not measures:
                raise _fail(f"{mapping.mapping_id}: AGGREGATE would lose every output")
            if group_by != step.group_by or measures != step.measures:
                deltas.append({"op": "remove_references", "fields": sorted((set(step.group_by) - set(group_by)) | {m.name for m in step.measures if m.field in dead})})
                step = replace(step, group_by=group_by, measures=measures)
        elif k == "LOAD_STAR":
            spec = step.star
            measures = tuple(m for m in spec.measures if m not in dead)
            dims = []
            for d in spec.dimensions:
                key_dead = set(d.natural_key) & dead
                attrs = tuple(a for a in d.attributes if a not in dead)
                if key_dead:
                    if attrs or key_dead != set(d.natural_key):
                        raise _fail(
                            f"star dimension {d.name!r} would lose its natural key "
                            "while other attributes remain"
                        )
                    continue  # the whole dimension retires with its key
                if attrs:
                    dims.append(
                        StarDimension(d.name, d.natural_key, attrs, tuple(h for h in d.hierarchy if h not in dead))
                    )
            new_spec = StarSpec(spec.fact, measures, tuple(dims))
            if new_spec.to_doc() != spec.to_doc():
                star_changed = True
                deltas.append({"op": "shrink_star", "fields": sorted(dead)})
                step = model.load_star(new_spec)
            new_steps.append(step)
            return tuple(new_steps), steps.star_fact_fields(new_spec, layout), deltas, star_changed
        try:
            layout = steps.propagate_step(step, layout, other)
        except EngineError as exc:
            raise _fail(f"{mapping.mapping_id}: {exc.message}") from exc
        new_steps.append(step)
    return tuple(new_steps), layout, deltas, star_changed


def _plan_drop_dataset(plan: Plan, ctx: dict) -> None:
    """DATASET_REMOVED + DROP_TARGET: retire the flows fed by the dataset.

    Mappings consuming it are removed; targets left without any mapping lose
    their stored data (schema history stays readable) and cubes on retired
    facts are deleted. Level-0 bytes are never touched."""
    staged = plan.staged
    worklist = [ctx["dataset"]]
    while worklist:
        dataset_id = worklist.pop(0)
        for mapping in staged.mappings_consuming(dataset_id):
            target = mapping.target_dataset
            del staged.mappings[mapping.mapping_id]
            plan.mapping_deltas.append(
                {"mapping_id": mapping.mapping_id, "deltas": [{"op": "remove_mapping"}]}
            )
            if not staged.mappings_for_target(target):
                plan.dataset_removals.append(target)
                staged.refresh_counts.pop(target, None)
                plan.schema_deltas.append(
                    {"dataset_id": target, "deltas": [{"op": "retire_dataset"}]}
                )
                for cube_def in _cubes_on_fact(staged, target):
                    del staged.cube_defs[cube_def.cube_id]
                    staged.drop_cuboids(cube_def.cube_id)
                    plan.cube_deletions.append(cube_def.cube_id)
                worklist.append(target)


# -- TYPE_WIDEN ---------------------------------------------------------------


def _plan_type_widen(plan: Plan, ctx: dict, conversion: str | None) -> None:
    staged = plan.staged
    dataset_id = ctx["dataset"]
    attribute = ctx.get("attribute")
    if not attribute:
        raise _fail("TYPE_WIDEN needs an attribute-level change")
    schema = staged.get_schema(dataset_id)
    by_name = schema.field_map()
    if attribute not in by_name:
        raise _fail(f"{dataset_id} has no field {attribute!r}")
    current = by_name[attribute].value_type
    target_type = widen(current, ctx.get("new_type", "TEXT"))
    if target_type == current:
        return  # drift narrower than the registered type: nothing to widen

    fields = tuple(
        FieldDef(f.name, target_type, f.nullable) if f.name == attribute else f for f in schema.fields
    )
    _bump_schema(staged, dataset_id, fields)
    plan.schema_deltas.append(
        {
            "dataset_id": dataset_id,
            "deltas": [{"op": "retype_field", "field": attribute, "from": current, "to": target_type}],
        }
    )

    for _, mapping in _mappings_by_level(staged):
        try:
            shape = staged.mapping_shape(mapping)
        except EngineError as exc:
            raise _fail(f"{mapping.mapping_id}: {exc.message}") from exc
        target = mapping.target_dataset
        old_target = staged.get_schema(target)
        if shape.star is not None:
            changed = _retype_diff(old_target.fields, shape.output_fields)
            if changed:
                plan.star_reruns.append(mapping.mapping_id)
                _bump_schema(staged, target, shape.output_fields)
                plan.schema_deltas.append(
                    {
                        "dataset_id": target,
                        "deltas": [
                            {"op": "retype_field", "field": n, "from": a, "to": b} for n, a, b in changed
                        ],
                    }
                )
                for cube_def in _cubes_on_fact(staged, target):
                    plan.cube_rebuilds.append(cube_def.cube_id)
            continue
        changed = _retype_diff(old_target.fields, shape.output_fields)
        if changed:
            _bump_schema(staged, target, shape.output_fields)
            plan.schema_deltas.append(
                {
                    "dataset_id": target,
                    "deltas": [{"op": "retype_field", "field": n, "from": a, "to": b} for n, a, b in changed],
                }
            )
            for n, _, to_type in changed:
                _migration(
                    plan,
                    staged,
                    target,
                    {
                        "op": "convert",
                        "field": n,
                        "to_type": to_type,
                        "expression": conversion if n == attribute else None,
                    },
                )


def _retype_diff(old_fields, new_fields) -> list[tuple[str, str, str]]:
    out = []
    for a, b in zip(old_fields, new_fields):
        if a.name == b.name and a.value_type != b.value_type:
            out.append((a.name, a.value_type, b.value_type))
    return out
