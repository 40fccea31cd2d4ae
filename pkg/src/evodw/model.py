"""Domain types shared by the metastore, the highway, adaptation and cubes.

Everything is an immutable dataclass with a ``to_doc``/``from_doc`` pair; the
document form is what the metadata export contains, so these conversions are
part of the external contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import EngineError
from .values import VALUE_TYPES

DATASET_KINDS = ("STRUCTURED", "SEMISTRUCTURED", "RAW")
SOURCE_FORMATS = ("DELIMITED", "JSON_RECORDS", "RAW_TEXT")
CHANGE_TYPES = (
    "ATTRIBUTE_ADDED",
    "ATTRIBUTE_REMOVED",
    "ATTRIBUTE_TYPE_CHANGED",
    "RENAME_CANDIDATE",
    "DATASET_ADDED",
    "DATASET_REMOVED",
)
CHANGE_ORIGINS = ("WRAPPER", "ELT")
CHANGE_STATUSES = ("PENDING", "RESOLVED")
OPTION_KINDS = (
    "PROPAGATE_ADD",
    "IGNORE",
    "MAP_WITH_DEFAULT",
    "DROP_TARGET",
    "RENAME_CONFIRM",
    "TYPE_WIDEN",
    "NEW_DIMENSION",
)
PC_STATUSES = ("PROPOSED", "CHOSEN", "APPLIED", "REJECTED")
AGG_FNS = ("SUM", "COUNT", "MIN", "MAX", "AVG")

# Which option kinds make sense for which change type.
KIND_COMPATIBILITY = {
    "ATTRIBUTE_ADDED": ("PROPAGATE_ADD", "IGNORE", "NEW_DIMENSION"),
    "ATTRIBUTE_REMOVED": ("MAP_WITH_DEFAULT", "DROP_TARGET", "IGNORE"),
    "ATTRIBUTE_TYPE_CHANGED": ("TYPE_WIDEN", "IGNORE"),
    "RENAME_CANDIDATE": ("RENAME_CONFIRM",),
    "DATASET_ADDED": ("PROPAGATE_ADD", "IGNORE", "NEW_DIMENSION"),
    "DATASET_REMOVED": ("MAP_WITH_DEFAULT", "DROP_TARGET", "IGNORE"),
}


def _require(condition: bool, code: str, message: str) -> None:
    if not condition:
        raise EngineError(code, message)


@dataclass(frozen=True)
class FieldDef:
    name: str
    value_type: str
    nullable: bool = False

    def __post_init__(self):
        _require(bool(self.name), "INVALID_SCHEMA", "field name must be non-empty")
        _require(
            self.value_type in VALUE_TYPES,
            "INVALID_SCHEMA",
            f"unknown value_type {self.value_type!r} for field {self.name!r}",
        )

    def to_doc(self) -> dict:
        return {"name": self.name, "value_type": self.value_type, "nullable": self.nullable}

    @staticmethod
    def from_doc(doc: dict) -> "FieldDef":
        return FieldDef(doc["name"], doc["value_type"], bool(doc.get("nullable", False)))


@dataclass(frozen=True)
class DatasetSchema:
    dataset_id: str
    level: int
    fields: tuple[FieldDef, ...]
    version: int = 1
    kind: str = "STRUCTURED"

    def __post_init__(self):
        _require(self.level >= 0, "INVALID_SCHEMA", "level must be >= 0")
        _require(self.version >= 1, "INVALID_SCHEMA", "version must be >= 1")
        _require(self.kind in DATASET_KINDS, "INVALID_SCHEMA", f"unknown kind {self.kind!r}")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise EngineError("DUPLICATE_FIELD", f"duplicate field(s) {dupes} in {self.dataset_id}")

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def field_map(self) -> dict[str, FieldDef]:
        return {f.name: f for f in self.fields}

    def to_doc(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "level": self.level,
            "version": self.version,
            "kind": self.kind,
            "fields": [f.to_doc() for f in self.fields],
        }

    @staticmethod
    def from_doc(doc: dict) -> "DatasetSchema":
        return DatasetSchema(
            dataset_id=doc["dataset_id"],
            level=int(doc["level"]),
            fields=tuple(FieldDef.from_doc(f) for f in doc["fields"]),
            version=int(doc["version"]),
            kind=doc["kind"],
        )


@dataclass(frozen=True)
class HighwayLevelDef:
    level: int
    tick_period: int
    description: str = ""

    def __post_init__(self):
        _require(self.level >= 0, "CONFIG_INVALID", "level must be >= 0")
        _require(self.tick_period >= 1, "CONFIG_INVALID", "tick_period must be >= 1")

    def to_doc(self) -> dict:
        return {"level": self.level, "tick_period": self.tick_period, "description": self.description}

    @staticmethod
    def from_doc(doc: dict) -> "HighwayLevelDef":
        return HighwayLevelDef(int(doc["level"]), int(doc["tick_period"]), doc.get("description", ""))


@dataclass(frozen=True)
class AggMeasure:
    field: str
    fn: str
    name: str

    def __post_init__(self):
        _require(self.fn in AGG_FNS, "MAPPING_INVALID", f"unknown aggregate fn {self.fn!r}")

    def to_doc(self) -> dict:
        return {"field": self.field, "fn": self.fn, "name": self.name}

    @staticmethod
    def from_doc(doc: dict) -> "AggMeasure":
        return AggMeasure(doc["field"], doc["fn"], doc.get("name") or f"{doc['fn'].lower()}_{doc['field']}")


@dataclass(frozen=True)
class StarDimension:
    name: str
    natural_key: tuple[str, ...]
    attributes: tuple[str, ...]
    hierarchy: tuple[str, ...] = ()  # finest -> coarsest

    def __post_init__(self):
        missing = [k for k in self.natural_key if k not in self.attributes]
        _require(not missing, "MAPPING_INVALID", f"natural key {missing} outside attributes of dim {self.name!r}")

    @property
    def key_field(self) -> str:
        return f"{self.name}_key"

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "natural_key": list(self.natural_key),
            "attributes": list(self.attributes),
            "hierarchy": list(self.hierarchy),
        }

    @staticmethod
    def from_doc(doc: dict) -> "StarDimension":
        return StarDimension(
            doc["name"],
            tuple(doc["natural_key"]),
            tuple(doc["attributes"]),
            tuple(doc.get("hierarchy", ())),
        )


@dataclass(frozen=True)
class StarSpec:
    fact: str
    measures: tuple[str, ...]
    dimensions: tuple[StarDimension, ...]

    def __post_init__(self):
        dim_fields = {a for d in self.dimensions for a in d.attributes}
        overlap = sorted(dim_fields & set(self.measures))
        _require(not overlap, "MAPPING_INVALID", f"fields {overlap} are both measures and dimension attributes")

    def dimension(self, name: str) -> StarDimension:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise EngineError("NOT_FOUND", f"star dimension {name!r}")

    def to_doc(self) -> dict:
        return {
            "fact": self.fact,
            "measures": list(self.measures),
            "dimensions": [d.to_doc() for d in self.dimensions],
        }

    @staticmethod
    def from_doc(doc: dict) -> "StarSpec":
        return StarSpec(
            doc["fact"],
            tuple(doc["measures"]),
            tuple(StarDimension.from_doc(d) for d in doc["dimensions"]),
        )


@dataclass(frozen=True)
class TransformStep:
    """One ELT step. ``kind`` selects the variant; the other attributes are
    kind-specific and unused otherwise."""

    kind: str
    fields: tuple[str, ...] = ()               # PROJECT
    renames: tuple[tuple[str, str], ...] = ()  # RENAME (old, new)
    predicate: str = ""                        # FILTER
    field_name: str = ""                       # DERIVE / EXTRACT output
    expression: str = ""                       # DERIVE
    value_type: str = "TEXT"                   # DERIVE
    nullable: bool = True                      # DERIVE output nullability
    source_field: str = ""                     # EXTRACT input
    pattern: str = ""                          # EXTRACT
    group: int = 1                             # EXTRACT capture group
    dataset: str = ""                          # JOIN / UNION other input
    keys: tuple[tuple[str, str], ...] = ()     # JOIN (left, right)
    join_type: str = "INNER"                   # JOIN
    group_by: tuple[str, ...] = ()             # AGGREGATE
    measures: tuple[AggMeasure, ...] = ()      # AGGREGATE
    star: Optional[StarSpec] = None            # LOAD_STAR

    def to_doc(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.kind == "PROJECT":
            doc["fields"] = list(self.fields)
        elif self.kind == "RENAME":
            doc["renames"] = {old: new for old, new in self.renames}
        elif self.kind == "FILTER":
            doc["predicate"] = self.predicate
        elif self.kind == "DERIVE":
            doc.update(
                field=self.field_name,
                expression=self.expression,
                value_type=self.value_type,
                nullable=self.nullable,
            )
        elif self.kind == "EXTRACT":
            doc.update(
                field=self.field_name,
                source_field=self.source_field,
                pattern=self.pattern,
                group=self.group,
            )
        elif self.kind == "JOIN":
            doc.update(dataset=self.dataset, keys=[list(k) for k in self.keys], join_type=self.join_type)
        elif self.kind == "UNION":
            doc["dataset"] = self.dataset
        elif self.kind == "AGGREGATE":
            doc.update(group_by=list(self.group_by), measures=[m.to_doc() for m in self.measures])
        elif self.kind == "LOAD_STAR":
            doc["star"] = self.star.to_doc() if self.star else None
        else:
            raise EngineError("MAPPING_INVALID", f"unknown step kind {self.kind!r}")
        return doc

    @staticmethod
    def from_doc(doc: dict) -> "TransformStep":
        kind = doc["kind"]
        if kind == "PROJECT":
            return project(*doc["fields"])
        if kind == "RENAME":
            return rename(**doc["renames"])
        if kind == "FILTER":
            return filter_(doc["predicate"])
        if kind == "DERIVE":
            return derive(doc["field"], doc["expression"], doc["value_type"], doc.get("nullable", True))
        if kind == "EXTRACT":
            return extract(doc["field"], doc["source_field"], doc["pattern"], int(doc.get("group", 1)))
        if kind == "JOIN":
            return join(doc["dataset"], [tuple(k) for k in doc["keys"]], doc.get("join_type", "INNER"))
        if kind == "UNION":
            return union(doc["dataset"])
        if kind == "AGGREGATE":
            return aggregate(doc["group_by"], [AggMeasure.from_doc(m) for m in doc["measures"]])
        if kind == "LOAD_STAR":
            return load_star(StarSpec.from_doc(doc["star"]))
        raise EngineError("MALFORMED_DOCUMENT", f"unknown step kind {kind!r}")


def project(*fields: str) -> TransformStep:
    return TransformStep("PROJECT", fields=tuple(fields))


def rename(**renames: str) -> TransformStep:
    return TransformStep("RENAME", renames=tuple(sorted(renames.items())))


def filter_(predicate: str) -> TransformStep:
    return TransformStep("FILTER", predicate=predicate)


def derive(name: str, expression: str, value_type: str, nullable: bool = True) -> TransformStep:
    return TransformStep("DERIVE", field_name=name, expression=expression, value_type=value_type, nullable=nullable)


def extract(name: str, source_field: str, pattern: str, group: int = 1) -> TransformStep:
    return TransformStep("EXTRACT", field_name=name, source_field=source_field, pattern=pattern, group=group)


def join(dataset: str, keys: list[tuple[str, str]], join_type: str = "INNER") -> TransformStep:
    if join_type not in ("INNER", "LEFT"):
        raise EngineError("MAPPING_INVALID", f"unknown join type {join_type!r}")
    return TransformStep("JOIN", dataset=dataset, keys=tuple(tuple(k) for k in keys), join_type=join_type)


def union(dataset: str) -> TransformStep:
    return TransformStep("UNION", dataset=dataset)


def aggregate(group_by, measures) -> TransformStep:
    return TransformStep("AGGREGATE", group_by=tuple(group_by), measures=tuple(measures))


def load_star(star: StarSpec) -> TransformStep:
    return TransformStep("LOAD_STAR", star=star)


@dataclass(frozen=True)
class MappingDefinition:
    mapping_id: str
    target_dataset: str
    source_datasets: tuple[str, ...]
    steps: tuple[TransformStep, ...]
    version: int = 1

    def __post_init__(self):
        _require(len(self.source_datasets) >= 1, "MAPPING_INVALID", "mapping needs at least one source dataset")
        _require(self.version >= 1, "MAPPING_INVALID", "version must be >= 1")

    def to_doc(self) -> dict:
        return {
            "mapping_id": self.mapping_id,
            "target_dataset": self.target_dataset,
            "source_datasets": list(self.source_datasets),
            "version": self.version,
            "steps": [s.to_doc() for s in self.steps],
        }

    @staticmethod
    def from_doc(doc: dict) -> "MappingDefinition":
        return MappingDefinition(
            mapping_id=doc["mapping_id"],
            target_dataset=doc["target_dataset"],
            source_datasets=tuple(doc["source_datasets"]),
            steps=tuple(TransformStep.from_doc(s) for s in doc["steps"]),
            version=int(doc["version"]),
        )


@dataclass(frozen=True)
class SourceChangeRecord:
    change_id: str
    source_id: str
    change_type: str
    payload: dict
    detected_at: str
    origin: str = "WRAPPER"
    status: str = "PENDING"

    def __post_init__(self):
        _require(self.change_type in CHANGE_TYPES, "INVALID_CHANGE", f"unknown change type {self.change_type!r}")
        _require(self.origin in CHANGE_ORIGINS, "INVALID_CHANGE", f"unknown origin {self.origin!r}")
        _require(self.status in CHANGE_STATUSES, "INVALID_CHANGE", f"unknown status {self.status!r}")

    def to_doc(self) -> dict:
        return {
            "change_id": self.change_id,
            "source_id": self.source_id,
            "change_type": self.change_type,
            "payload": dict(self.payload),
            "detected_at": self.detected_at,
            "origin": self.origin,
            "status": self.status,
        }

    @staticmethod
    def from_doc(doc: dict) -> "SourceChangeRecord":
        return SourceChangeRecord(
            change_id=doc["change_id"],
            source_id=doc["source_id"],
            change_type=doc["change_type"],
            payload=dict(doc.get("payload", {})),
            detected_at=doc["detected_at"],
            origin=doc["origin"],
            status=doc["status"],
        )


@dataclass(frozen=True)
class AdaptationRule:
    rule_id: str
    change_type: str
    option_kinds: tuple[str, ...]
    enabled: bool = True

    def __post_init__(self):
        _require(self.change_type in CHANGE_TYPES, "INVALID_RULE", f"unknown change type {self.change_type!r}")
        _require(len(self.option_kinds) > 0, "INVALID_RULE", "option_kinds must be non-empty")
        for kind in self.option_kinds:
            _require(kind in OPTION_KINDS, "INVALID_RULE", f"unknown option kind {kind!r}")

    def to_doc(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "change_type": self.change_type,
            "option_kinds": list(self.option_kinds),
            "enabled": self.enabled,
        }

    @staticmethod
    def from_doc(doc: dict) -> "AdaptationRule":
        return AdaptationRule(doc["rule_id"], doc["change_type"], tuple(doc["option_kinds"]), bool(doc["enabled"]))


@dataclass(frozen=True)
class HistoryEntry:
    status: str
    at: str
    actor: str

    def to_doc(self) -> dict:
        return {"status": self.status, "at": self.at, "actor": self.actor}

    @staticmethod
    def from_doc(doc: dict) -> "HistoryEntry":
        return HistoryEntry(doc["status"], doc["at"], doc["actor"])


@dataclass(frozen=True)
class PotentialChange:
    pc_id: str
    change_id: Optional[str]  # None = developer-initiated via the management path
    option_kind: str
    parameters: dict
    status: str
    status_history: tuple[HistoryEntry, ...]

    def __post_init__(self):
        _require(self.option_kind in OPTION_KINDS, "INVALID_CHANGE", f"unknown option kind {self.option_kind!r}")
        _require(self.status in PC_STATUSES, "INVALID_CHANGE", f"unknown status {self.status!r}")

    def with_status(self, status: str, at: str, actor: str) -> "PotentialChange":
        entry = HistoryEntry(status, at, actor)
        return replace(self, status=status, status_history=self.status_history + (entry,))

    def to_doc(self) -> dict:
        return {
            "pc_id": self.pc_id,
            "change_id": self.change_id,
            "option_kind": self.option_kind,
            "parameters": dict(self.parameters),
            "status": self.status,
            "status_history": [h.to_doc() for h in self.status_history],
        }

    @staticmethod
    def from_doc(doc: dict) -> "PotentialChange":
        return PotentialChange(
            pc_id=doc["pc_id"],
            change_id=doc.get("change_id"),
            option_kind=doc["option_kind"],
            parameters=dict(doc.get("parameters", {})),
            status=doc["status"],
            status_history=tuple(HistoryEntry.from_doc(h) for h in doc.get("status_history", ())),
        )


@dataclass(frozen=True)
class CubeMeasure:
    field: str
    fn: str
    name: str

    def __post_init__(self):
        _require(self.fn in AGG_FNS, "INVALID_CUBE", f"unknown measure fn {self.fn!r}")

    def to_doc(self) -> dict:
        return {"field": self.field, "fn": self.fn, "name": self.name}

    @staticmethod
    def from_doc(doc: dict) -> "CubeMeasure":
        return CubeMeasure(doc["field"], doc["fn"], doc.get("name") or f"{doc['fn'].lower()}_{doc['field']}")


@dataclass(frozen=True)
class DimensionAttr:
    attribute: str
    dimension: str
    hierarchy_position: int = 0  # 0 = finest

    def to_doc(self) -> dict:
        return {
            "attribute": self.attribute,
            "dimension": self.dimension,
            "hierarchy_position": self.hierarchy_position,
        }

    @staticmethod
    def from_doc(doc: dict) -> "DimensionAttr":
        return DimensionAttr(doc["attribute"], doc["dimension"], int(doc.get("hierarchy_position", 0)))


@dataclass(frozen=True)
class CubeDefinition:
    cube_id: str
    fact_dataset: str
    dimension_attrs: tuple[DimensionAttr, ...]
    measures: tuple[CubeMeasure, ...]
    max_attrs: int = 2
    explicit_cuboids: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        _require(self.max_attrs >= 0, "INVALID_CUBE", "max_attrs must be >= 0")
        names = [a.attribute for a in self.dimension_attrs]
        _require(len(set(names)) == len(names), "INVALID_CUBE", "duplicate dimension attributes")
        measure_names = [m.name for m in self.measures]
        _require(len(set(measure_names)) == len(measure_names), "INVALID_CUBE", "duplicate measure names")

    def attr_names(self) -> list[str]:
        return [a.attribute for a in self.dimension_attrs]

    def to_doc(self) -> dict:
        return {
            "cube_id": self.cube_id,
            "fact_dataset": self.fact_dataset,
            "dimension_attrs": [a.to_doc() for a in self.dimension_attrs],
            "measures": [m.to_doc() for m in self.measures],
            "max_attrs": self.max_attrs,
            "explicit_cuboids": [list(c) for c in self.explicit_cuboids],
        }

    @staticmethod
    def from_doc(doc: dict) -> "CubeDefinition":
        return CubeDefinition(
            cube_id=doc["cube_id"],
            fact_dataset=doc["fact_dataset"],
            dimension_attrs=tuple(DimensionAttr.from_doc(a) for a in doc["dimension_attrs"]),
            measures=tuple(CubeMeasure.from_doc(m) for m in doc["measures"]),
            max_attrs=int(doc.get("max_attrs", 2)),
            explicit_cuboids=tuple(tuple(c) for c in doc.get("explicit_cuboids", ())),
        )


@dataclass(frozen=True)
class CuboidMeta:
    cube_id: str
    attrs: tuple[str, ...]  # sorted attribute names
    row_count: int
    built_at: str
    valid: bool
    path: str

    def key(self) -> str:
        return "+".join(self.attrs) if self.attrs else "apex"

    def to_doc(self) -> dict:
        return {
            "cube_id": self.cube_id,
            "attrs": list(self.attrs),
            "row_count": self.row_count,
            "built_at": self.built_at,
            "valid": self.valid,
            "path": self.path,
        }

    @staticmethod
    def from_doc(doc: dict) -> "CuboidMeta":
        return CuboidMeta(
            cube_id=doc["cube_id"],
            attrs=tuple(doc["attrs"]),
            row_count=int(doc["row_count"]),
            built_at=doc["built_at"],
            valid=bool(doc["valid"]),
            path=doc["path"],
        )


@dataclass(frozen=True)
class SourceDescriptor:
    source_id: str
    format: str
    level0_dataset: str
    delimiter: str = ","
    latency_class: int = 1
    # Wrapper observation state; durable so restart keeps dataset
    # presence tracking intact.
    misses: int = 0
    seen_data: bool = False

    def __post_init__(self):
        _require(self.format in SOURCE_FORMATS, "INVALID_SOURCE", f"unknown format {self.format!r}")
        _require(self.latency_class >= 1, "INVALID_SOURCE", "latency_class must be >= 1")
        if self.format == "DELIMITED":
            _require(len(self.delimiter) == 1, "INVALID_SOURCE", "delimiter must be a single character")

    def to_doc(self) -> dict:
        return {
            "source_id": self.source_id,
            "format": self.format,
            "delimiter": self.delimiter,
            "level0_dataset": self.level0_dataset,
            "latency_class": self.latency_class,
            "misses": self.misses,
            "seen_data": self.seen_data,
        }

    @staticmethod
    def from_doc(doc: dict) -> "SourceDescriptor":
        return SourceDescriptor(
            source_id=doc["source_id"],
            format=doc["format"],
            level0_dataset=doc["level0_dataset"],
            delimiter=doc.get("delimiter", ","),
            latency_class=int(doc.get("latency_class", 1)),
            misses=int(doc.get("misses", 0)),
            seen_data=bool(doc.get("seen_data", False)),
        )


@dataclass(frozen=True)
class RawBatch:
    batch_id: str
    source_id: str
    arrived_at: str
    byte_length: int
    record_count: int
    parseable: bool = True

    def to_doc(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "source_id": self.source_id,
            "arrived_at": self.arrived_at,
            "byte_length": self.byte_length,
            "record_count": self.record_count,
            "parseable": self.parseable,
        }

    @staticmethod
    def from_doc(doc: dict) -> "RawBatch":
        return RawBatch(
            batch_id=doc["batch_id"],
            source_id=doc["source_id"],
            arrived_at=doc["arrived_at"],
            byte_length=int(doc["byte_length"]),
            record_count=int(doc["record_count"]),
            parseable=bool(doc.get("parseable", True)),
        )


@dataclass(frozen=True)
class QuerySpec:
    cube_id: str
    group_by: tuple[str, ...] = ()
    filters: tuple[tuple[str, str, object], ...] = ()  # (attr, op, literal)
    measures: tuple[str, ...] = ()  # requested measure names; empty = all

    def to_doc(self) -> dict:
        return {
            "cube_id": self.cube_id,
            "group_by": list(self.group_by),
            "filters": [[a, op, lit] for a, op, lit in self.filters],
            "measures": list(self.measures),
        }

    @staticmethod
    def from_doc(doc: dict) -> "QuerySpec":
        return QuerySpec(
            cube_id=doc["cube_id"],
            group_by=tuple(doc.get("group_by", ())),
            filters=tuple((f[0], f[1], f[2]) for f in doc.get("filters", ())),
            measures=tuple(doc.get("measures", ())),
        )


@dataclass
class StarBundle:
    """Materialized star: fact rows plus one table per dimension."""

    spec: StarSpec
    fact_rows: list[dict] = field(default_factory=list)
    dimensions: dict[str, list[dict]] = field(default_factory=dict)
