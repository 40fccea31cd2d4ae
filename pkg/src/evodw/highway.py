"""The data highway: leveled stores with tick-driven, full-replace refreshes.

Level 0 holds raw batches exactly as received; every level above it is the
output of one mapping over the level below, serialized as newline-delimited
JSON (`level<N>/<dataset>/v<refresh_count>.ndjson`, field order per schema).
A star-producing mapping writes its dimension tables next to the fact file
(`dim-<name>-v<refresh_count>.ndjson`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import ingestion, steps
from .errors import EngineError
from .metastore import MetaStore
from .model import DatasetSchema, MappingDefinition, StarBundle
from .values import coerce_json_value, coerce_text_value, ndjson_line


@dataclass
class RefreshStats:
    dataset_id: str
    records_in: int = 0
    records_out: int = 0
    quarantined: int = 0


@dataclass
class RefreshReport:
    tick: int
    refreshed: dict[int, list[str]] = field(default_factory=dict)
    stats: list[RefreshStats] = field(default_factory=list)


class CoercionError(Exception):
    def __init__(self, change_type: str, payload: dict, reason: str):
        super().__init__(reason)
        self.change_type = change_type
        self.payload = payload


def coerce_record(raw: dict, schema: DatasetSchema, textual: bool) -> dict:
    """Conform one parsed record to its declared schema (declared field order).

    Unknown extra fields are dropped here; they surface through change
    detection at ingest time instead of poisoning every refresh.
    """
    out = {}
    for f in schema.fields:
        value = raw.get(f.name)
        if value is None:
            if not f.nullable:
                raise CoercionError(
                    "ATTRIBUTE_REMOVED",
                    {"dataset": schema.dataset_id, "attribute": f.name},
                    f"non-nullable field {f.name!r} is missing",
                )
            out[f.name] = None
            continue
        try:
            out[f.name] = (
                coerce_text_value(value, f.value_type)
                if textual and isinstance(value, str)
                else coerce_json_value(value, f.value_type)
            )
        except ValueError as exc:
            observed = (
                ingestion.infer_cell_type(value)
                if isinstance(value, str) and textual
                else ingestion.infer_json_type(value)
            )
            raise CoercionError(
                "ATTRIBUTE_TYPE_CHANGED",
                {
                    "dataset": schema.dataset_id,
                    "attribute": f.name,
                    "old_type": f.value_type,
                    "new_type": observed,
                },
                str(exc),
            ) from exc
    return out


class LevelStorage:
    """File layout and (de)serialization for every highway level."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)

    # -- paths ------------------------------------------------------------

    def batch_path(self, dataset_id: str, batch_id: str) -> Path:
        return self.data_dir / "level0" / dataset_id / f"batch-{batch_id}"

    def dataset_path(self, level: int, dataset_id: str, refresh_count: int) -> Path:
        return self.data_dir / f"level{level}" / dataset_id / f"v{refresh_count}.ndjson"

    def dim_path(self, level: int, dataset_id: str, dim: str, refresh_count: int) -> Path:
        return self.data_dir / f"level{level}" / dataset_id / f"dim-{dim}-v{refresh_count}.ndjson"

    # -- raw level 0 --------------------------------------------------------

    def write_batch(self, dataset_id: str, batch_id: str, data: bytes) -> Path:
        path = self.batch_path(dataset_id, batch_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return path

    def read_batch(self, dataset_id: str, batch_id: str) -> bytes:
        return self.batch_path(dataset_id, batch_id).read_bytes()

    # -- typed levels ------------------------------------------------------

    def write_records(self, path: Path, records: list[dict]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write(ndjson_line(r) + "\n")
        tmp.replace(path)

    def read_records(self, path: Path) -> list[dict]:
        if not path.exists():
            return []
        with path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def write_current(self, schema: DatasetSchema, refresh_count: int, result) -> None:
        """Store a refresh result (record list or StarBundle) as the current
        content of a dataset."""
        if isinstance(result, StarBundle):
            self.write_records(
                self.dataset_path(schema.level, schema.dataset_id, refresh_count), result.fact_rows
            )
            for name, rows in result.dimensions.items():
                self.write_records(
                    self.dim_path(schema.level, schema.dataset_id, name, refresh_count), rows
                )
        else:
            self.write_records(self.dataset_path(schema.level, schema.dataset_id, refresh_count), result)


class Highway:
    """Refresh machinery over one MetaStore plus one LevelStorage."""

    def __init__(self, store: MetaStore, storage: LevelStorage):
        self.store = store
        self.storage = storage

    # -- reading current contents -------------------------------------------

    def column_aliases(self, dataset_id: str) -> list[tuple[str, str]]:
        """Applied renames, oldest first: historical raw batches still carry
        the old column names and must keep feeding the highway."""
        aliases = []
        for pc in self.store.applied_history():
            if pc.option_kind != "RENAME_CONFIRM" or pc.change_id is None:
                continue
            record = self.store.get_change(pc.change_id)
            payload = record.payload
            target = payload.get("dataset") or self.store.get_source(record.source_id).level0_dataset
            if target == dataset_id:
                aliases.append((payload["from_attribute"], payload["to_attribute"]))
        return aliases

    def level0_records(self, dataset_id: str) -> tuple[list[dict], list[CoercionError]]:
        """All level-0 records of a dataset, coerced to the registered schema.

        Records that violate the schema are returned separately (quarantine).
        """
        schema = self.store.get_schema(dataset_id)
        aliases = self.column_aliases(dataset_id)
        kept: list[dict] = []
        quarantined: list[CoercionError] = []
        sources = {s.source_id: s for s in self.store.sources.values() if s.level0_dataset == dataset_id}
        for batch in sorted(self.store.batches, key=lambda b: b.batch_id):
            descriptor = sources.get(batch.source_id)
            if descriptor is None or not batch.parseable:
                continue
            data = self.storage.read_batch(dataset_id, batch.batch_id)
            if descriptor.format == "RAW_TEXT":
                raw_records = ingestion.raw_text_records(schema.fields[0].name, data)
            else:
                try:
                    raw_records = ingestion.parse_batch(descriptor, data)
                except EngineError:
                    continue  # flagged unparseable after the fact; skip defensively
            textual = descriptor.format in ("DELIMITED", "RAW_TEXT")
            for raw in raw_records:
                for old, new in aliases:
                    if old in raw and new not in raw:
                        raw[new] = raw.pop(old)
                try:
                    kept.append(coerce_record(raw, schema, textual))
                except CoercionError as exc:
                    quarantined.append(exc)
        return kept, quarantined

    def current_records(self, dataset_id: str) -> list[dict]:
        """Current typed contents of a dataset (fact rows for star targets)."""
        schema = self.store.get_schema(dataset_id)
        if schema.level == 0:
            return self.level0_records(dataset_id)[0]
        count = self.store.refresh_count(dataset_id)
        if count == 0:
            return []
        return self.storage.read_records(self.storage.dataset_path(schema.level, dataset_id, count))

    def star_spec_for(self, dataset_id: str):
        for mapping in self.store.mappings_for_target(dataset_id):
            if mapping.steps and mapping.steps[-1].kind == "LOAD_STAR":
                return mapping.steps[-1].star
        return None

    def current_bundle(self, dataset_id: str) -> StarBundle:
        spec = self.star_spec_for(dataset_id)
        if spec is None:
            raise EngineError("SCHEMA_MISMATCH", f"dataset {dataset_id!r} is not a star target")
        schema = self.store.get_schema(dataset_id)
        count = self.store.refresh_count(dataset_id)
        bundle = StarBundle(spec=spec)
        if count == 0:
            bundle.dimensions = {d.name: [] for d in spec.dimensions}
            return bundle
        bundle.fact_rows = self.storage.read_records(
            self.storage.dataset_path(schema.level, dataset_id, count)
        )
        for d in spec.dimensions:
            bundle.dimensions[d.name] = self.storage.read_records(
                self.storage.dim_path(schema.level, dataset_id, d.name, count)
            )
        return bundle

    # -- refresh ------------------------------------------------------------

    def refresh_level(self, level: int, tick: int, report: RefreshReport) -> list[str]:
        """Refresh every mapped dataset at ``level`` if its period divides the
        tick; returns the refreshed dataset ids."""
        if level < 1:
            raise EngineError("CONFIG_INVALID", "level 0 is ingest-driven, not refreshed")
        level_def = self.store.levels.get(level)
        if level_def is None:
            raise EngineError("NOT_FOUND", f"level {level} is not defined")
        if tick % level_def.tick_period != 0:
            return []
        refreshed = []
        for mapping in self.store.current_mappings():
            target = self.store.get_schema(mapping.target_dataset)
            if target.level != level:
                continue
            self._refresh_target(mapping, target, report)
            refreshed.append(target.dataset_id)
        report.refreshed[level] = refreshed
        return refreshed

    def _refresh_target(self, mapping: MappingDefinition, target: DatasetSchema, report: RefreshReport) -> None:
        # Defensive re-validation: metadata edits outside the adaptation path
        # can leave a mapping referencing fields that no longer exist.
        try:
            self.store._check_mapping_current(mapping)
        except EngineError as exc:
            self._record_elt_change(
                mapping,
                "ATTRIBUTE_REMOVED",
                {"dataset": mapping.source_datasets[0], "mapping_id": mapping.mapping_id, "detail": exc.message},
            )
            raise EngineError("MAPPING_INVALID", f"{mapping.mapping_id}: {exc.message}") from exc

        stats = RefreshStats(dataset_id=target.dataset_id)
        inputs: dict[str, list[dict]] = {}
        for ds in mapping.source_datasets:
            source_schema = self.store.get_schema(ds)
            if source_schema.level >= 1:
                mapped = bool(self.store.mappings_for_target(ds))
                if mapped and self.store.refresh_count(ds) == 0:
                    raise EngineError(
                        "MAPPING_INVALID",
                        f"{mapping.mapping_id}: upstream dataset {ds!r} has never been refreshed",
                    )
                records = self.current_records(ds)
            else:
                records, quarantined = self.level0_records(ds)
                stats.quarantined += len(quarantined)
                stats.records_in += len(quarantined)  # quarantined rows did arrive
                for bad in quarantined:
                    self._record_elt_change(mapping, bad.change_type, bad.payload)
            inputs[ds] = records
            stats.records_in += len(records)

        head = inputs[mapping.source_datasets[0]]
        result = steps.run(mapping.steps, head, lambda ds: inputs[ds])
        stats.records_out = len(result.fact_rows) if isinstance(result, StarBundle) else len(result)

        count = self.store.bump_refresh(target.dataset_id)
        self.storage.write_current(target, count, result)
        report.stats.append(stats)

    def _record_elt_change(self, mapping: MappingDefinition, change_type: str, payload: dict) -> None:
        source_ids = sorted(
            s.source_id for s in self.store.sources.values() if s.level0_dataset in mapping.source_datasets
        )
        if not source_ids:
            return
        source_id = source_ids[0]
        if self.store.has_equivalent_change(source_id, change_type, payload):
            return
        from .model import SourceChangeRecord

        self.store.record_change(
            SourceChangeRecord(
                change_id=self.store.next_id("chg"),
                source_id=source_id,
                change_type=change_type,
                payload=payload,
                detected_at=self.store.now(),
                origin="ELT",
                status="PENDING",
            )
        )

    def run_tick(self) -> RefreshReport:
        """Advance the scheduler one tick and refresh due levels bottom-up."""
        self.store.tick += 1
        report = RefreshReport(tick=self.store.tick)
        for level in range(1, self.store.top_level() + 1):
            self.refresh_level(level, self.store.tick, report)
        return report
