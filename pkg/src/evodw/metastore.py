"""The metastore: six interconnected metadata sections behind one writer.

Sections (and the top-level keys of the export document):

* ``highway``           - level definitions, versioned dataset schemas, source
                          descriptors, raw-batch records, refresh state and the
                          scheduler/sequence counters
* ``mappings``          - versioned ELT mapping definitions
* ``cubes``             - cube definitions plus the cuboid catalog
* ``source_changes``    - detected structural changes in sources
* ``adaptation_rules``  - change type -> option kinds to generate
* ``potential_changes`` - generated/chosen adaptation options with history

Everything is in memory; the engine persists the export document after each
committed mutation. ``import_document(export_document())`` is the identity.
"""

from __future__ import annotations

from typing import Optional

from . import steps
from .errors import EngineError, not_found
from .model import (
    AdaptationRule,
    CubeDefinition,
    CuboidMeta,
    DatasetSchema,
    FieldDef,
    HighwayLevelDef,
    MappingDefinition,
    PotentialChange,
    RawBatch,
    SourceChangeRecord,
    SourceDescriptor,
)
from .values import canonical_json_bytes, logical_timestamp

# Built-in rule table, overridable per change type via AdaptationRule records.
DEFAULT_RULE_TABLE = {
    "ATTRIBUTE_ADDED": ("PROPAGATE_ADD", "IGNORE", "NEW_DIMENSION"),
    "ATTRIBUTE_REMOVED": ("MAP_WITH_DEFAULT", "DROP_TARGET", "IGNORE"),
    "ATTRIBUTE_TYPE_CHANGED": ("TYPE_WIDEN", "IGNORE"),
    "RENAME_CANDIDATE": ("RENAME_CONFIRM",),
    "DATASET_ADDED": ("IGNORE",),
    "DATASET_REMOVED": ("DROP_TARGET", "IGNORE"),
}

_LEGAL_TRANSITIONS = {
    ("PROPOSED", "CHOSEN"),
    ("PROPOSED", "REJECTED"),
    ("CHOSEN", "APPLIED"),
}

SECTIONS = ("highway", "cubes", "mappings", "source_changes", "adaptation_rules", "potential_changes")


class MetaStore:
    def __init__(self):
        self.levels: dict[int, HighwayLevelDef] = {}
        self.schemas: dict[str, list[DatasetSchema]] = {}
        self.sources: dict[str, SourceDescriptor] = {}
        self.batches: list[RawBatch] = []
        self.mappings: dict[str, list[MappingDefinition]] = {}
        self.cube_defs: dict[str, CubeDefinition] = {}
        self.cuboids: dict[tuple[str, tuple[str, ...]], CuboidMeta] = {}
        self.source_changes: dict[str, SourceChangeRecord] = {}
        self.rules: dict[str, AdaptationRule] = {}
        self.potential_changes: dict[str, PotentialChange] = {}
        self.refresh_counts: dict[str, int] = {}
        self.tick: int = 0
        self.sequences: dict[str, int] = {"batch": 0, "chg": 0, "event": 0, "pc": 0}

    # -- identity & clock ---------------------------------------------------

    def next_seq(self, kind: str) -> int:
        self.sequences[kind] = self.sequences.get(kind, 0) + 1
        return self.sequences[kind]

    def next_id(self, kind: str) -> str:
        return f"{kind}-{self.next_seq(kind):06d}"

    def now(self) -> str:
        """Logical clock: one second per committed event, reproducible."""
        self.sequences["event"] = self.sequences.get("event", 0) + 1
        return logical_timestamp(self.sequences["event"])

    # -- highway levels -----------------------------------------------------

    def put_level(self, level: HighwayLevelDef) -> None:
        staged = dict(self.levels)
        staged[level.level] = level
        _check_levels(staged)
        self.levels = staged

    def top_level(self) -> int:
        if not self.levels:
            raise EngineError("CONFIG_INVALID", "no highway levels defined")
        return max(self.levels)

    # -- dataset schemas ----------------------------------------------------

    def put_schema(self, schema: DatasetSchema) -> int:
        versions = self.schemas.get(schema.dataset_id, [])
        expected = len(versions) + 1
        if schema.version != expected:
            raise EngineError(
                "VERSION_CONFLICT",
                f"{schema.dataset_id}: supplied version {schema.version}, expected {expected}",
            )
        if schema.level not in self.levels:
            raise EngineError("CONFIG_INVALID", f"level {schema.level} is not defined")
        if versions and versions[-1].level != schema.level:
            raise EngineError("INVALID_SCHEMA", f"{schema.dataset_id}: level cannot change across versions")
        if schema.level == 0:
            if schema.kind not in ("RAW", "SEMISTRUCTURED"):
                raise EngineError("INVALID_SCHEMA", "level-0 datasets must be RAW or SEMISTRUCTURED")
        elif schema.kind != "STRUCTURED":
            raise EngineError("INVALID_SCHEMA", "datasets above level 0 must be STRUCTURED")
        self.schemas.setdefault(schema.dataset_id, []).append(schema)
        broken = self.validate()
        if broken:
            self.schemas[schema.dataset_id].pop()
            if not self.schemas[schema.dataset_id]:
                del self.schemas[schema.dataset_id]
            raise EngineError("INTEGRITY_VIOLATION", "; ".join(broken))
        return schema.version

    def get_schema(self, dataset_id: str, version: Optional[int] = None) -> DatasetSchema:
        versions = self.schemas.get(dataset_id)
        if not versions:
            raise not_found(f"dataset {dataset_id!r}")
        if version is None:
            return versions[-1]
        if not 1 <= version <= len(versions):
            raise not_found(f"dataset {dataset_id!r} version {version}")
        return versions[version - 1]

    def has_dataset(self, dataset_id: str) -> bool:
        return dataset_id in self.schemas

    def datasets_at(self, level: int) -> list[DatasetSchema]:
        current = [vs[-1] for vs in self.schemas.values()]
        return sorted((s for s in current if s.level == level), key=lambda s: s.dataset_id)

    # -- mappings -------------------------------------------------------

    def put_mapping(self, mapping: MappingDefinition) -> int:
        versions = self.mappings.get(mapping.mapping_id, [])
        expected = len(versions) + 1
        if mapping.version != expected:
            raise EngineError(
                "VERSION_CONFLICT",
                f"{mapping.mapping_id}: supplied version {mapping.version}, expected {expected}",
            )
        self._check_mapping(mapping)
        self.mappings.setdefault(mapping.mapping_id, []).append(mapping)
        return mapping.version

    def get_mapping(self, mapping_id: str, version: Optional[int] = None) -> MappingDefinition:
        versions = self.mappings.get(mapping_id)
        if not versions:
            raise not_found(f"mapping {mapping_id!r}")
        if version is None:
            return versions[-1]
        if not 1 <= version <= len(versions):
            raise not_found(f"mapping {mapping_id!r} version {version}")
        return versions[version - 1]

    def current_mappings(self) -> list[MappingDefinition]:
        return sorted((vs[-1] for vs in self.mappings.values()), key=lambda m: m.mapping_id)

    def mappings_for_target(self, dataset_id: str) -> list[MappingDefinition]:
        return [m for m in self.current_mappings() if m.target_dataset == dataset_id]

    def mappings_consuming(self, dataset_id: str) -> list[MappingDefinition]:
        return [m for m in self.current_mappings() if dataset_id in m.source_datasets]

    def mapping_shape(self, mapping: MappingDefinition) -> steps.MappingShape:
        """Validate one mapping against current schemas and return its layout."""
        head = self.get_schema(mapping.source_datasets[0])
        return steps.propagate(
            mapping.steps,
            head.fields,
            lambda ds: self._join_input_fields(mapping, ds),
        )

    def _join_input_fields(self, mapping: MappingDefinition, dataset_id: str) -> tuple[FieldDef, ...]:
        if dataset_id not in mapping.source_datasets:
            raise EngineError("MAPPING_INVALID", f"step references {dataset_id!r} outside source_datasets")
        return self.get_schema(dataset_id).fields

    def _check_mapping(self, mapping: MappingDefinition) -> None:
        target = self.get_schema(mapping.target_dataset)
        source_levels = []
        for ds in mapping.source_datasets:
            source_levels.append(self.get_schema(ds).level)
        if target.level != max(source_levels) + 1:
            raise EngineError(
                "MAPPING_INVALID",
                f"target level {target.level} != max(source levels) + 1 = {max(source_levels) + 1}",
            )
        if any(lvl != target.level - 1 for lvl in source_levels):
            raise EngineError("MAPPING_INVALID", "all source datasets must sit one level below the target")
        shape = self.mapping_shape(mapping)
        if [
            (f.name, f.value_type) for f in shape.output_fields
        ] != [(f.name, f.value_type) for f in target.fields]:
            raise EngineError(
                "MAPPING_INVALID",
                f"mapping output {[f.name for f in shape.output_fields]} does not match "
                f"target schema {[f.name for f in target.fields]}",
            )

    # -- sources & batches --------------------------------------------------

    def put_source(self, descriptor: SourceDescriptor) -> None:
        if descriptor.source_id in self.sources:
            raise EngineError("DUPLICATE_SOURCE", f"source {descriptor.source_id!r} already registered")
        if not self.has_dataset(descriptor.level0_dataset):
            raise EngineError("UNKNOWN_DATASET", f"dataset {descriptor.level0_dataset!r} is not registered")
        if self.get_schema(descriptor.level0_dataset).level != 0:
            raise EngineError("UNKNOWN_DATASET", f"dataset {descriptor.level0_dataset!r} is not at level 0")
        self.sources[descriptor.source_id] = descriptor

    def get_source(self, source_id: str) -> SourceDescriptor:
        try:
            return self.sources[source_id]
        except KeyError:
            raise EngineError("UNKNOWN_SOURCE", f"source {source_id!r} is not registered") from None

    def update_source(self, descriptor: SourceDescriptor) -> None:
        if descriptor.source_id not in self.sources:
            raise EngineError("UNKNOWN_SOURCE", f"source {descriptor.source_id!r} is not registered")
        self.sources[descriptor.source_id] = descriptor

    def add_batch(self, batch: RawBatch) -> None:
        self.batches.append(batch)

    def batches_for_dataset(self, dataset_id: str) -> list[RawBatch]:
        source_ids = {s.source_id for s in self.sources.values() if s.level0_dataset == dataset_id}
        return [b for b in self.batches if b.source_id in source_ids]

    # -- source changes -------------------------------------------------

    def record_change(self, record: SourceChangeRecord) -> str:
        if record.source_id not in self.sources:
            raise EngineError("UNKNOWN_SOURCE", f"source {record.source_id!r} is not registered")
        self.source_changes[record.change_id] = record
        return record.change_id

    def get_change(self, change_id: str) -> SourceChangeRecord:
        try:
            return self.source_changes[change_id]
        except KeyError:
            raise not_found(f"change {change_id!r}") from None

    def changes_by_status(self, status: Optional[str] = None) -> list[SourceChangeRecord]:
        records = sorted(self.source_changes.values(), key=lambda r: r.change_id)
        if status is None:
            return records
        return [r for r in records if r.status == status]

    def has_equivalent_change(self, source_id: str, change_type: str, payload: dict) -> bool:
        """True when an identical change is already pending or was resolved.

        Keeps repeated ingests of the same drifted batch (or a deliberately
        ignored drift) from flooding the inbox.
        """
        for r in self.source_changes.values():
            if r.source_id == source_id and r.change_type == change_type and r.payload == payload:
                return True
        return False

    def set_change_status(self, change_id: str, status: str) -> None:
        record = self.get_change(change_id)
        self.source_changes[change_id] = SourceChangeRecord(
            change_id=record.change_id,
            source_id=record.source_id,
            change_type=record.change_type,
            payload=record.payload,
            detected_at=record.detected_at,
            origin=record.origin,
            status=status,
        )

    # -- adaptation rules -----------------------------------------------

    def put_rule(self, rule: AdaptationRule) -> None:
        if rule.enabled:
            for other in self.rules.values():
                if other.rule_id != rule.rule_id and other.enabled and other.change_type == rule.change_type:
                    raise EngineError(
                        "RULE_CONFLICT",
                        f"change type {rule.change_type} already has enabled rule {other.rule_id!r}",
                    )
        self.rules[rule.rule_id] = rule

    def rules_for(self, change_type: str) -> AdaptationRule:
        for rule in sorted(self.rules.values(), key=lambda r: r.rule_id):
            if rule.enabled and rule.change_type == change_type:
                return rule
        return AdaptationRule(
            rule_id=f"default-{change_type.lower()}",
            change_type=change_type,
            option_kinds=DEFAULT_RULE_TABLE[change_type],
            enabled=True,
        )

    # -- potential changes ----------------------------------------------

    def add_potential_change(self, pc: PotentialChange) -> None:
        self.potential_changes[pc.pc_id] = pc

    def get_potential_change(self, pc_id: str) -> PotentialChange:
        try:
            return self.potential_changes[pc_id]
        except KeyError:
            raise not_found(f"potential change {pc_id!r}") from None

    def siblings(self, pc: PotentialChange) -> list[PotentialChange]:
        if pc.change_id is None:
            return [pc]
        return sorted(
            (p for p in self.potential_changes.values() if p.change_id == pc.change_id),
            key=lambda p: p.pc_id,
        )

    def options_for_change(self, change_id: str) -> list[PotentialChange]:
        return sorted(
            (p for p in self.potential_changes.values() if p.change_id == change_id),
            key=lambda p: p.pc_id,
        )

    def transition_change(self, pc_id: str, new_status: str, actor: str) -> PotentialChange:
        pc = self.get_potential_change(pc_id)
        if (pc.status, new_status) not in _LEGAL_TRANSITIONS:
            raise EngineError("ILLEGAL_TRANSITION", f"{pc.status} -> {new_status} is not allowed")
        if new_status == "CHOSEN":
            # One chosen option per change; siblings can only leave CHOSEN by
            # being applied, so allowing a second would strand it.
            for sibling in self.siblings(pc):
                if sibling.pc_id != pc_id and sibling.status in ("CHOSEN", "APPLIED"):
                    raise EngineError(
                        "ILLEGAL_TRANSITION",
                        f"sibling {sibling.pc_id} is already {sibling.status}",
                    )
        updated = pc.with_status(new_status, self.now(), actor)
        self.potential_changes[pc_id] = updated
        return updated

    def applied_history(self) -> list[PotentialChange]:
        applied = [p for p in self.potential_changes.values() if p.status == "APPLIED"]
        return sorted(applied, key=lambda p: (p.status_history[-1].at, p.pc_id))

    # -- cubes ------------------------------------------------------------

    def put_cube_def(self, cube: CubeDefinition) -> None:
        staged = dict(self.cube_defs)
        staged[cube.cube_id] = cube
        broken = _check_cube(cube, self)
        if broken:
            raise EngineError("INVALID_CUBE", "; ".join(broken))
        self.cube_defs = staged

    def get_cube_def(self, cube_id: str) -> CubeDefinition:
        try:
            return self.cube_defs[cube_id]
        except KeyError:
            raise EngineError("UNKNOWN_CUBE", f"cube {cube_id!r} is not defined") from None

    def set_cuboid(self, meta: CuboidMeta) -> None:
        self.cuboids[(meta.cube_id, meta.attrs)] = meta

    def drop_cuboids(self, cube_id: str) -> None:
        self.cuboids = {k: v for k, v in self.cuboids.items() if k[0] != cube_id}

    def cuboids_for(self, cube_id: str) -> list[CuboidMeta]:
        metas = [m for (cid, _), m in self.cuboids.items() if cid == cube_id]
        return sorted(metas, key=lambda m: (len(m.attrs), m.attrs))

    # -- refresh state ----------------------------------------------------

    def refresh_count(self, dataset_id: str) -> int:
        return self.refresh_counts.get(dataset_id, 0)

    def bump_refresh(self, dataset_id: str) -> int:
        self.refresh_counts[dataset_id] = self.refresh_counts.get(dataset_id, 0) + 1
        return self.refresh_counts[dataset_id]

    # -- export / import ----------------------------------------------------

    def export_document(self) -> dict:
        return {
            "highway": {
                "levels": [self.levels[k].to_doc() for k in sorted(self.levels)],
                "datasets": [
                    s.to_doc()
                    for ds in sorted(self.schemas)
                    for s in self.schemas[ds]
                ],
                "sources": [self.sources[k].to_doc() for k in sorted(self.sources)],
                "batches": [b.to_doc() for b in sorted(self.batches, key=lambda b: b.batch_id)],
                "refresh_state": [
                    {"dataset_id": ds, "refresh_count": n}
                    for ds, n in sorted(self.refresh_counts.items())
                ],
                "scheduler": {"tick": self.tick},
                "sequences": dict(sorted(self.sequences.items())),
            },
            "cubes": {
                "definitions": [self.cube_defs[k].to_doc() for k in sorted(self.cube_defs)],
                "cuboids": [m.to_doc() for m in sorted(self.cuboids.values(), key=lambda m: (m.cube_id, m.attrs))],
            },
            "mappings": [
                m.to_doc()
                for mid in sorted(self.mappings)
                for m in self.mappings[mid]
            ],
            "source_changes": [self.source_changes[k].to_doc() for k in sorted(self.source_changes)],
            "adaptation_rules": [self.rules[k].to_doc() for k in sorted(self.rules)],
            "potential_changes": [self.potential_changes[k].to_doc() for k in sorted(self.potential_changes)],
        }

    def export_bytes(self) -> bytes:
        return canonical_json_bytes(self.export_document())

    def import_document(self, doc: dict) -> int:
        if not isinstance(doc, dict) or set(doc) != set(SECTIONS):
            raise EngineError(
                "MALFORMED_DOCUMENT",
                f"expected exactly the sections {sorted(SECTIONS)}, got {sorted(doc) if isinstance(doc, dict) else type(doc).__name__}",
            )
        fresh = MetaStore()
        try:
            highway = doc["highway"]
            for item in highway["levels"]:
                level = HighwayLevelDef.from_doc(item)
                fresh.levels[level.level] = level
            for item in highway["datasets"]:
                schema = DatasetSchema.from_doc(item)
                fresh.schemas.setdefault(schema.dataset_id, []).append(schema)
            for item in highway["sources"]:
                src = SourceDescriptor.from_doc(item)
                fresh.sources[src.source_id] = src
            for item in highway["batches"]:
                fresh.batches.append(RawBatch.from_doc(item))
            for item in highway.get("refresh_state", ()):
                fresh.refresh_counts[item["dataset_id"]] = int(item["refresh_count"])
            fresh.tick = int(highway.get("scheduler", {}).get("tick", 0))
            fresh.sequences.update({k: int(v) for k, v in highway.get("sequences", {}).items()})
            for item in doc["cubes"]["definitions"]:
                cube = CubeDefinition.from_doc(item)
                fresh.cube_defs[cube.cube_id] = cube
            for item in doc["cubes"]["cuboids"]:
                meta = CuboidMeta.from_doc(item)
                fresh.cuboids[(meta.cube_id, meta.attrs)] = meta
            for item in doc["mappings"]:
                mapping = MappingDefinition.from_doc(item)
                fresh.mappings.setdefault(mapping.mapping_id, []).append(mapping)
            for item in doc["source_changes"]:
                record = SourceChangeRecord.from_doc(item)
                fresh.source_changes[record.change_id] = record
            for item in doc["adaptation_rules"]:
                rule = AdaptationRule.from_doc(item)
                fresh.rules[rule.rule_id] = rule
            for item in doc["potential_changes"]:
                pc = PotentialChange.from_doc(item)
                fresh.potential_changes[pc.pc_id] = pc
        except EngineError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise EngineError("MALFORMED_DOCUMENT", f"cannot parse document: {exc!r}") from exc
        for versions in list(fresh.schemas.values()) + list(fresh.mappings.values()):
            versions.sort(key=lambda v: v.version)
        broken = fresh.validate()
        if broken:
            raise EngineError("INTEGRITY_VIOLATION", "; ".join(broken))
        self.__dict__.update(fresh.__dict__)
        return (
            len(fresh.levels)
            + sum(len(v) for v in fresh.schemas.values())
            + len(fresh.sources)
            + len(fresh.batches)
            + len(fresh.cube_defs)
            + len(fresh.cuboids)
            + sum(len(v) for v in fresh.mappings.values())
            + len(fresh.source_changes)
            + len(fresh.rules)
            + len(fresh.potential_changes)
        )

    # -- full-store validation ------------------------------------------

    def validate(self) -> list[str]:
        """Referential-integrity pass; an empty list means the store is sound."""
        problems: list[str] = []
        try:
            _check_levels(self.levels)
        except EngineError as exc:
            problems.append(exc.message)

        for ds, versions in self.schemas.items():
            for i, schema in enumerate(versions):
                if schema.version != i + 1:
                    problems.append(f"dataset {ds}: version sequence broken at {schema.version}")
            if versions and versions[-1].level not in self.levels:
                problems.append(f"dataset {ds}: level {versions[-1].level} is not defined")

        for source in self.sources.values():
            if source.level0_dataset not in self.schemas:
                problems.append(f"source {source.source_id}: dataset {source.level0_dataset!r} missing")
            elif self.schemas[source.level0_dataset][-1].level != 0:
                problems.append(f"source {source.source_id}: dataset {source.level0_dataset!r} not at level 0")

        for batch in self.batches:
            if batch.source_id not in self.sources:
                problems.append(f"batch {batch.batch_id}: source {batch.source_id!r} missing")

        for versions in self.mappings.values():
            mapping = versions[-1]
            try:
                self._check_mapping_current(mapping)
            except EngineError as exc:
                problems.append(f"mapping {mapping.mapping_id}: {exc.message}")

        for cube in self.cube_defs.values():
            problems.extend(_check_cube(cube, self))

        for (cube_id, attrs), meta in self.cuboids.items():
            if cube_id not in self.cube_defs:
                problems.append(f"cuboid {meta.key()}: cube {cube_id!r} missing")
            elif not set(attrs) <= set(self.cube_defs[cube_id].attr_names()):
                problems.append(f"cuboid {cube_id}/{meta.key()}: attrs outside the cube definition")

        enabled_types: dict[str, str] = {}
        for rule in self.rules.values():
            if rule.enabled:
                if rule.change_type in enabled_types:
                    problems.append(f"rules {enabled_types[rule.change_type]} and {rule.rule_id} both enabled "
                                    f"for {rule.change_type}")
                enabled_types[rule.change_type] = rule.rule_id

        for pc in self.potential_changes.values():
            if pc.change_id is not None and pc.change_id not in self.source_changes:
                problems.append(f"potential change {pc.pc_id}: change {pc.change_id!r} missing")
            if pc.status_history and pc.status_history[-1].status != pc.status:
                problems.append(f"potential change {pc.pc_id}: history does not end in {pc.status}")

        for record in self.source_changes.values():
            if record.status == "RESOLVED":
                terminal = [
                    p
                    for p in self.potential_changes.values()
                    if p.change_id == record.change_id and p.status in ("APPLIED", "REJECTED")
                ]
                if not terminal:
                    problems.append(f"change {record.change_id}: RESOLVED without a terminal option")

        for ds in self.refresh_counts:
            if ds not in self.schemas:
                problems.append(f"refresh state references missing dataset {ds!r}")
        return problems

    def _check_mapping_current(self, mapping: MappingDefinition) -> None:
        for ds in (mapping.target_dataset, *mapping.source_datasets):
            if ds not in self.schemas:
                raise EngineError("MAPPING_INVALID", f"dataset {ds!r} missing")
        self._check_mapping(mapping)


def _check_levels(levels: dict[int, HighwayLevelDef]) -> None:
    if not levels:
        return
    ordered = sorted(levels)
    if ordered != list(range(len(ordered))):
        raise EngineError("CONFIG_INVALID", f"levels must be contiguous from 0, got {ordered}")
    periods = [levels[k].tick_period for k in ordered]
    for a, b in zip(periods, periods[1:]):
        if b < a:
            raise EngineError("CONFIG_INVALID", f"tick_periods must be non-decreasing, got {periods}")


def _check_cube(cube: CubeDefinition, store: MetaStore) -> list[str]:
    problems: list[str] = []
    if cube.fact_dataset not in store.schemas:
        return [f"cube {cube.cube_id}: fact dataset {cube.fact_dataset!r} missing"]
    fact_schema = store.schemas[cube.fact_dataset][-1]
    if store.levels and fact_schema.level != max(store.levels):
        problems.append(f"cube {cube.cube_id}: fact dataset is not at the top level")
    star = None
    for mapping in store.mappings_for_target(cube.fact_dataset):
        if mapping.steps and mapping.steps[-1].kind == "LOAD_STAR":
            star = mapping.steps[-1].star
    if star is None:
        problems.append(f"cube {cube.cube_id}: fact dataset has no star-producing mapping")
        return problems
    star_attrs = {a: d for d in star.dimensions for a in d.attributes}
    for attr in cube.dimension_attrs:
        dim = star_attrs.get(attr.attribute)
        if dim is None:
            problems.append(f"cube {cube.cube_id}: attribute {attr.attribute!r} not in any star dimension")
        elif dim.name != attr.dimension:
            problems.append(
                f"cube {cube.cube_id}: attribute {attr.attribute!r} belongs to dimension "
                f"{dim.name!r}, not {attr.dimension!r}"
            )
    fact_fields = {f.name for f in fact_schema.fields}
    for measure in cube.measures:
        if measure.field not in star.measures or measure.field not in fact_fields:
            problems.append(f"cube {cube.cube_id}: measure field {measure.field!r} is not a star measure")
    cube_attrs = set(cube.attr_names())
    for combo in cube.explicit_cuboids:
        if not set(combo) <= cube_attrs:
            problems.append(f"cube {cube.cube_id}: explicit cuboid {list(combo)} outside dimension attrs")
    return problems
