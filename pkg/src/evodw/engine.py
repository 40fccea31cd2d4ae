"""The engine: one data_dir, one metastore, one writer.

All mutations run under a single lock and end with a durable write of the
metadata export document (write-temp-then-rename). Reads serve the committed
in-memory state. ``apply`` is the one multi-file transaction: it snapshots
the document and the affected data files, swaps a staged store in, migrates
files, rebuilds cuboids, and rolls everything back on any failure (including
the injected test fault).
"""

from __future__ import annotations

import json
import threading
from dataclasses import replace
from pathlib import Path

from . import adaptation, expr, ingestion, steps
from .config import EngineConfig
from .cube import CubeEngine
from .errors import EngineError
from .highway import Highway, LevelStorage, RefreshReport
from .metastore import MetaStore
from .model import (
    CubeDefinition,
    HistoryEntry,
    PotentialChange,
    QuerySpec,
    RawBatch,
    SourceChangeRecord,
    SourceDescriptor,
)
from .values import coerce_json_value, convert_widened

MISS_THRESHOLD = 3  # consecutive empty pulls before a dataset counts as gone


class Engine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self.store = MetaStore()
        self.storage = LevelStorage(self.data_dir)
        self.highway = Highway(self.store, self.storage)
        self.cubes = CubeEngine(self.store, self.highway, self.data_dir)
        if self.metastore_path.exists():
            self.store.import_document(json.loads(self.metastore_path.read_text(encoding="utf-8")))
        else:
            for level in config.levels:
                self.store.put_level(level)
            self._persist()

    @property
    def metastore_path(self) -> Path:
        return self.data_dir / "metastore.json"

    def _persist(self) -> None:
        data = self.store.export_bytes()
        tmp = self.metastore_path.with_suffix(".tmp")
        tmp.write_bytes(data)
        tmp.replace(self.metastore_path)

    def _rebind(self, store: MetaStore) -> None:
        self.store = store
        self.highway.store = store
        self.cubes.store = store

    # -- metadata passthroughs ------------------------------------------------

    def put_schema(self, schema) -> int:
        with self._lock:
            version = self.store.put_schema(schema)
            self._persist()
            return version

    def put_mapping(self, mapping) -> int:
        with self._lock:
            version = self.store.put_mapping(mapping)
            self._persist()
            return version

    def put_rule(self, rule) -> None:
        with self._lock:
            self.store.put_rule(rule)
            self._persist()

    def export_bytes(self) -> bytes:
        return self.store.export_bytes()

    def import_document(self, doc: dict) -> int:
        with self._lock:
            count = self.store.import_document(doc)
            self._persist()
            return count

    def validate(self) -> list[str]:
        return self.store.validate()

    # -- sources & ingestion ---------------------------------------------------

    def register_source(self, doc: dict) -> SourceDescriptor:
        descriptor = SourceDescriptor.from_doc(doc)
        with self._lock:
            schema = None
            if self.store.has_dataset(descriptor.level0_dataset):
                schema = self.store.get_schema(descriptor.level0_dataset)
            if descriptor.format == "RAW_TEXT" and schema is not None:
                if len(schema.fields) != 1 or schema.fields[0].value_type != "TEXT":
                    raise EngineError(
                        "INVALID_SOURCE",
                        "RAW_TEXT sources need a single-TEXT-field level-0 dataset",
                    )
            self.store.put_source(descriptor)
            self._persist()
            return descriptor

    def list_sources(self) -> list[dict]:
        return [s.to_doc() for s in sorted(self.store.sources.values(), key=lambda s: s.source_id)]

    def ingest(self, source_id: str, data: bytes) -> dict:
        with self._lock:
            descriptor = self.store.get_source(source_id)
            batch_id = f"{self.store.next_seq('batch'):06d}"
            self.storage.write_batch(descriptor.level0_dataset, batch_id, data)

            parse_failure = None
            records: list[dict] = []
            if descriptor.format in ("DELIMITED", "JSON_RECORDS"):
                try:
                    records = ingestion.parse_batch(descriptor, data)
                except EngineError as exc:
                    parse_failure = exc

            batch = RawBatch(
                batch_id=batch_id,
                source_id=source_id,
                arrived_at=self.store.now(),
                byte_length=len(data),
                record_count=len(records),
                parseable=parse_failure is None,
            )
            self.store.add_batch(batch)
            if parse_failure is not None:
                self._persist()
                raise parse_failure

            change_ids = self._observe(descriptor, records, data)
            self._persist()
            return {"batch": batch.to_doc(), "changes": change_ids}

    def _observe(self, descriptor: SourceDescriptor, records: list[dict], data: bytes) -> list[str]:
        """Presence tracking plus schema drift detection for one batch."""
        change_ids: list[str] = []
        empty = len(data) == 0 if descriptor.format == "RAW_TEXT" else len(records) == 0
        if empty:
            misses = descriptor.misses + 1
            self.store.update_source(replace(descriptor, misses=misses))
            if misses == MISS_THRESHOLD and descriptor.seen_data:
                change_ids.extend(
                    self._record_wrapper_change(
                        descriptor, "DATASET_REMOVED", {"dataset": descriptor.level0_dataset}
                    )
                )
            return change_ids

        if not descriptor.seen_data:
            change_ids.extend(
                self._record_wrapper_change(
                    descriptor, "DATASET_ADDED", {"dataset": descriptor.level0_dataset}
                )
            )
        self.store.update_source(replace(descriptor, misses=0, seen_data=True))

        if descriptor.format in ("DELIMITED", "JSON_RECORDS") and records:
            inferred = ingestion.infer_schema(records, descriptor.format)
            registered = self.store.get_schema(descriptor.level0_dataset)
            for change_type, payload in ingestion.detect_changes(inferred, registered):
                change_ids.extend(self._record_wrapper_change(descriptor, change_type, payload))
        return change_ids

    def _record_wrapper_change(self, descriptor: SourceDescriptor, change_type: str, payload: dict) -> list[str]:
        if self.store.has_equivalent_change(descriptor.source_id, change_type, payload):
            return []
        record = SourceChangeRecord(
            change_id=self.store.next_id("chg"),
            source_id=descriptor.source_id,
            change_type=change_type,
            payload=payload,
            detected_at=self.store.now(),
            origin="WRAPPER",
            status="PENDING",
        )
        return [self.store.record_change(record)]

    # -- highway ---------------------------------------------------------------

    def tick(self) -> dict:
        with self._lock:
            report = self.highway.run_tick()
            self._rebuild_after_refresh(report)
            self._persist()
            return self._report_doc(report)

    def refresh_level(self, level: int) -> dict:
        """Refresh one level against the current tick (operational escape
        hatch; the scheduler path is `tick`)."""
        with self._lock:
            report = RefreshReport(tick=self.store.tick)
            self.highway.refresh_level(level, self.store.tick, report)
            self._rebuild_after_refresh(report)
            self._persist()
            return self._report_doc(report)

    def _rebuild_after_refresh(self, report: RefreshReport) -> None:
        top = self.store.top_level()
        refreshed_top = set(report.refreshed.get(top, ()))
        for cube_def in sorted(self.store.cube_defs.values(), key=lambda c: c.cube_id):
            if cube_def.fact_dataset in refreshed_top:
                self.cubes.rebuild_existing(cube_def.cube_id)

    @staticmethod
    def _report_doc(report: RefreshReport) -> dict:
        return {
            "tick": report.tick,
            "refreshed": {str(k): v for k, v in sorted(report.refreshed.items())},
            "stats": [
                {
                    "dataset_id": s.dataset_id,
                    "records_in": s.records_in,
                    "records_out": s.records_out,
                    "quarantined": s.quarantined,
                }
                for s in report.stats
            ],
        }

    def level_datasets(self, level: int) -> list[dict]:
        if level not in self.store.levels:
            raise EngineError("NOT_FOUND", f"level {level} is not defined")
        out = []
        for schema in self.store.datasets_at(level):
            entry = {
                "dataset_id": schema.dataset_id,
                "version": schema.version,
                "kind": schema.kind,
                "refresh_count": self.store.refresh_count(schema.dataset_id),
            }
            if level == 0:
                entry["batches"] = len(self.store.batches_for_dataset(schema.dataset_id))
            out.append(entry)
        return out

    def dataset_records(self, level: int, dataset_id: str, table: str | None = None) -> list[dict]:
        schema = self.store.get_schema(dataset_id)
        if schema.level != level:
            raise EngineError("NOT_FOUND", f"dataset {dataset_id!r} is not at level {level}")
        if table is not None:
            bundle = self.highway.current_bundle(dataset_id)
            if table not in bundle.dimensions:
                raise EngineError("NOT_FOUND", f"star dimension {table!r}")
            return bundle.dimensions[table]
        return self.highway.current_records(dataset_id)

    # -- evolution workflow ------------------------------------------------------

    def list_changes(self, status: str | None = None) -> list[dict]:
        records = self.store.changes_by_status(None)
        out = []
        for record in records:
            options = self.store.options_for_change(record.change_id)
            live = [p for p in options if p.status in ("PROPOSED", "CHOSEN")]
            effective = record.status
            if record.status == "PENDING" and live:
                effective = "UNDER_REVIEW"
            if status is not None and effective != status:
                continue
            doc = record.to_doc()
            doc["effective_status"] = effective
            doc["option_count"] = len(options)
            doc["live_options"] = len(live)
            out.append(doc)
        return out

    def propose(self, change_id: str) -> list[dict]:
        with self._lock:
            options = adaptation.propose(self.store, change_id)
            self._persist()
            return [p.to_doc() for p in options]

    def options_for_change(self, change_id: str) -> list[dict]:
        self.store.get_change(change_id)
        return [p.to_doc() for p in self.store.options_for_change(change_id)]

    def preview(self, pc_id: str) -> dict:
        plan = adaptation.build_plan(self.store, pc_id, None, for_apply=False)
        return plan.impact_report()

    def create_manual_option(self, option_kind: str, parameters: dict, actor: str = "developer") -> dict:
        """Developer-initiated change (management path): a potential change
        with no detected source change behind it."""
        with self._lock:
            pc = PotentialChange(
                pc_id=self.store.next_id("pc"),
                change_id=None,
                option_kind=option_kind,
                parameters=dict(parameters),
                status="PROPOSED",
                status_history=(HistoryEntry("PROPOSED", self.store.now(), actor),),
            )
            self.store.add_potential_change(pc)
            self._persist()
            return pc.to_doc()

    def reject(self, pc_id: str, actor: str = "developer") -> dict:
        with self._lock:
            pc = self.store.transition_change(pc_id, "REJECTED", actor)
            self._persist()
            return pc.to_doc()

    def history(self) -> list[dict]:
        return [p.to_doc() for p in self.store.applied_history()]

    # -- apply: the one multi-file transaction -------------------------------------

    def apply(self, pc_id: str, parameters: dict | None = None, actor: str = "developer") -> dict:
        with self._lock:
            pre_doc_bytes = self.store.export_bytes()
            live_store = self.store
            pc = self.store.get_potential_change(pc_id)
            plan = adaptation.build_plan(self.store, pc_id, parameters, for_apply=True)
            staged = plan.staged

            # Lifecycle on the staged store so one swap commits everything.
            staged_pc = staged.get_potential_change(pc_id)
            merged = dict(staged_pc.parameters)
            merged.update(parameters or {})
            staged.potential_changes[pc_id] = replace(staged_pc, parameters=merged)
            if staged_pc.status == "PROPOSED":
                staged.transition_change(pc_id, "CHOSEN", actor)
            staged.transition_change(pc_id, "APPLIED", actor)
            for sibling in staged.siblings(staged.get_potential_change(pc_id)):
                if sibling.pc_id != pc_id and sibling.status == "PROPOSED":
                    staged.transition_change(sibling.pc_id, "REJECTED", "system")
            if pc.change_id is not None:
                staged.set_change_status(pc.change_id, "RESOLVED")

            backups = self._snapshot_files(plan)
            try:
                self._rebind(staged)
                self._persist()  # metadata write
                if self.config.fault_injection == "ABORT_MID_APPLY":
                    raise EngineError("APPLY_FAILED", "fault injection: aborted after metadata write")
                self._run_migrations(plan)
                self._rerun_stars(plan)
                self._delete_retired_files(plan)
                for cube_id in sorted(set(plan.cube_rebuilds)):
                    if cube_id in self.store.cube_defs:
                        self.cubes.rebuild_existing(cube_id)
                self._persist()
            except Exception:
                self._rebind(live_store)
                self._restore_files(backups)
                self.metastore_path.write_bytes(pre_doc_bytes)
                raise
            return self.store.get_potential_change(pc_id).to_doc()

    # -- apply internals -------------------------------------------------------

    def _affected_dirs(self, plan: adaptation.Plan) -> list[Path]:
        dirs: set[Path] = set()
        for dataset_id in plan.migrations:
            schema = plan.staged.get_schema(dataset_id)
            dirs.add(self.data_dir / f"level{schema.level}" / dataset_id)
        for mapping_id in plan.star_reruns:
            mapping = plan.staged.get_mapping(mapping_id)
            schema = plan.staged.get_schema(mapping.target_dataset)
            dirs.add(self.data_dir / f"level{schema.level}" / mapping.target_dataset)
        for dataset_id in plan.dataset_removals:
            schema = plan.staged.get_schema(dataset_id)
            dirs.add(self.data_dir / f"level{schema.level}" / dataset_id)
        for cube_id in set(plan.cube_rebuilds) | set(plan.cube_deletions):
            dirs.add(self.data_dir / "cubes" / cube_id)
        return sorted(dirs)

    def _snapshot_files(self, plan: adaptation.Plan) -> dict[Path, dict[Path, bytes]]:
        snapshot: dict[Path, dict[Path, bytes]] = {}
        for directory in self._affected_dirs(plan):
            files = {}
            if directory.exists():
                for path in sorted(directory.rglob("*")):
                    if path.is_file():
                        files[path] = path.read_bytes()
            snapshot[directory] = files
        return snapshot

    def _restore_files(self, snapshot: dict[Path, dict[Path, bytes]]) -> None:
        for directory, files in snapshot.items():
            if directory.exists():
                for path in sorted(directory.rglob("*")):
                    if path.is_file() and path not in files:
                        path.unlink()
            for path, data in files.items():
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(data)

    def _run_migrations(self, plan: adaptation.Plan) -> None:
        ordered = sorted(plan.migrations, key=lambda ds: (self.store.get_schema(ds).level, ds))
        for dataset_id in ordered:
            schema = self.store.get_schema(dataset_id)
            count = self.store.refresh_count(dataset_id)
            if schema.level == 0 or count == 0:
                continue
            path = self.storage.dataset_path(schema.level, dataset_id, count)
            records = self.storage.read_records(path)
            for op in plan.migrations[dataset_id]:
                if op["op"] == "rename":
                    records = [
                        {op["to"] if k == op["from"] else k: v for k, v in r.items()} for r in records
                    ]
                elif op["op"] == "convert":
                    records = [self._convert_record(r, op) for r in records]
            reshaped = [{f.name: r.get(f.name) for f in schema.fields} for r in records]
            self.storage.write_records(path, reshaped)

    @staticmethod
    def _convert_record(record: dict, op: dict) -> dict:
        field, to_type = op["field"], op["to_type"]
        out = dict(record)
        if op.get("expression"):
            value = expr.evaluate(op["expression"], record)
            if value is not None:
                value = coerce_json_value(value, to_type)
        else:
            value = convert_widened(record.get(field), to_type)
        out[field] = value
        return out

    def _rerun_stars(self, plan: adaptation.Plan) -> None:
        for mapping_id in sorted(set(plan.star_reruns)):
            mapping = self.store.get_mapping(mapping_id)
            target = self.store.get_schema(mapping.target_dataset)
            count = self.store.refresh_count(target.dataset_id)
            if count == 0:
                continue
            inputs = {ds: self.highway.current_records(ds) for ds in mapping.source_datasets}
            result = steps.run(mapping.steps, inputs[mapping.source_datasets[0]], lambda ds: inputs[ds])
            self.storage.write_current(target, count, result)

    def _delete_retired_files(self, plan: adaptation.Plan) -> None:
        for dataset_id in plan.dataset_removals:
            schema = self.store.get_schema(dataset_id)
            directory = self.data_dir / f"level{schema.level}" / dataset_id
            if directory.exists():
                for path in sorted(directory.rglob("*"), reverse=True):
                    if path.is_file():
                        path.unlink()
        for cube_id in plan.cube_deletions:
            directory = self.data_dir / "cubes" / cube_id
            if directory.exists():
                for path in sorted(directory.rglob("*"), reverse=True):
                    if path.is_file():
                        path.unlink()

    # -- cubes -------------------------------------------------------------------

    def create_cube(self, doc: dict) -> dict:
        cube = CubeDefinition.from_doc({"max_attrs": self.config.max_attrs, **doc})
        with self._lock:
            self.store.put_cube_def(cube)
            self._persist()
            return cube.to_doc()

    def materialize(self, cube_id: str) -> list[dict]:
        with self._lock:
            metas = self.cubes.materialize(cube_id)
            self._persist()
            return [m.to_doc() for m in metas]

    def query(self, cube_id: str, doc: dict) -> dict:
        spec = QuerySpec.from_doc({**doc, "cube_id": cube_id})
        force = doc.get("use_cuboid")
        if isinstance(force, list):
            force = tuple(force)
        return self.cubes.answer_query(spec, force_cuboid=force)

    def navigate(self, cube_id: str, doc: dict) -> dict:
        spec = QuerySpec.from_doc({**doc.get("spec", {}), "cube_id": cube_id})
        out = self.cubes.navigate(spec, doc.get("direction", ""), doc.get("attr", ""))
        return out.to_doc()
