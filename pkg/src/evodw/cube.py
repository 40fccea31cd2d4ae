"""Cuboid materialization and query answering over the top-level star.

Policy: the apex cuboid (grand totals), every attribute combination up to
``max_attrs``, the full cuboid, plus any explicitly listed combinations.
AVG is stored as a (sum, count) pair so any cuboid re-aggregates exactly;
COUNT DISTINCT is deliberately unsupported above the base fact.

Cuboid files: ``cubes/<cube_id>/<attrs joined by '+' or 'apex'>.ndjson`` with
internal pair columns ``<name>__sum`` / ``<name>__cnt``.
"""

from __future__ import annotations

from itertools import combinations
from pathlib import Path

from . import steps
from .errors import EngineError
from .highway import Highway
from .metastore import MetaStore
from .model import CubeDefinition, CuboidMeta, QuerySpec
from .values import coerce_json_value, ndjson_line


def cuboid_attr_sets(cube: CubeDefinition) -> list[tuple[str, ...]]:
    """The attribute combinations the materialization policy asks for."""
    attrs = sorted(cube.attr_names())
    wanted: set[tuple[str, ...]] = {(), tuple(attrs)}
    limit = min(cube.max_attrs, len(attrs))
    for size in range(1, limit + 1):
        wanted.update(combinations(attrs, size))
    for explicit in cube.explicit_cuboids:
        wanted.add(tuple(sorted(explicit)))
    return sorted(wanted, key=lambda a: (len(a), a))


def _group_rows(base: list[dict], attrs: tuple[str, ...], cube: CubeDefinition) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for row in base:
        key = tuple(row[a] for a in attrs)
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        row = dict(zip(attrs, key))
        for m in cube.measures:
            values = [r[m.field] for r in members if r[m.field] is not None]
            if m.fn == "AVG":
                row[f"{m.name}__sum"] = sum(values) if values else None
                row[f"{m.name}__cnt"] = len(values)
            elif m.fn == "COUNT":
                row[m.name] = len(values)
            elif m.fn == "SUM":
                row[m.name] = sum(values) if values else None
            elif m.fn == "MIN":
                row[m.name] = min(values) if values else None
            else:
                row[m.name] = max(values) if values else None
        out.append(row)
    return out


class CubeEngine:
    def __init__(self, store: MetaStore, highway: Highway, data_dir: Path):
        self.store = store
        self.highway = highway
        self.data_dir = Path(data_dir)

    # -- storage ------------------------------------------------------------

    def cuboid_path(self, cube_id: str, attrs: tuple[str, ...]) -> Path:
        name = "+".join(attrs) if attrs else "apex"
        return self.data_dir / "cubes" / cube_id / f"{name}.ndjson"

    def _write_cuboid(self, path: Path, rows: list[dict]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(ndjson_line(r) + "\n")
        tmp.replace(path)

    def _read_cuboid(self, meta: CuboidMeta) -> list[dict]:
        import json

        path = self.data_dir / meta.path
        with path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- materialization ------------------------------------------------------

    def base_rows(self, cube: CubeDefinition) -> list[dict]:
        """The fact-joined-with-dimensions record set the cube aggregates."""
        bundle = self.highway.current_bundle(cube.fact_dataset)
        return steps.join_star(bundle)

    def materialize(self, cube_id: str) -> list[CuboidMeta]:
        cube = self.store.get_cube_def(cube_id)
        base = self.base_rows(cube)
        self.store.drop_cuboids(cube_id)
        metas = []
        for attrs in cuboid_attr_sets(cube):
            metas.append(self._build_cuboid(cube, attrs, base))
        return metas

    def _build_cuboid(self, cube: CubeDefinition, attrs: tuple[str, ...], base: list[dict]) -> CuboidMeta:
        rows = _group_rows(base, attrs, cube)
        path = self.cuboid_path(cube.cube_id, attrs)
        self._write_cuboid(path, rows)
        meta = CuboidMeta(
            cube_id=cube.cube_id,
            attrs=attrs,
            row_count=len(rows),
            built_at=self.store.now(),
            valid=True,
            path=str(path.relative_to(self.data_dir)),
        )
        self.store.set_cuboid(meta)
        return meta

    def invalidate_and_rebuild(self, cube_id: str, affected_attrs: set[str]) -> list[str]:
        """Invalidate cuboids touching the affected attributes (plus apex and
        full), then rebuild them from the current top-level data."""
        cube = self.store.get_cube_def(cube_id)
        existing = self.store.cuboids_for(cube_id)
        if not existing:
            return []
        full = tuple(sorted(cube.attr_names()))
        targets = []
        for meta in existing:
            if not meta.attrs or meta.attrs == full or set(meta.attrs) & affected_attrs:
                targets.append(meta)
        for meta in targets:
            self.store.set_cuboid(
                CuboidMeta(meta.cube_id, meta.attrs, meta.row_count, meta.built_at, False, meta.path)
            )
        base = self.base_rows(cube)
        rebuilt = []
        for meta in targets:
            self._build_cuboid(cube, meta.attrs, base)
            rebuilt.append(meta.key())
        return rebuilt

    def rebuild_existing(self, cube_id: str) -> list[str]:
        """Re-derive a cube's materialized cuboids (used after the fact dataset
        refreshes or the definition changes).

        Keeps every previously built combination that still exists in the
        definition and adds the policy set, so a definition change cannot
        leave stale or missing cuboids behind."""
        cube = self.store.get_cube_def(cube_id)
        existing = self.store.cuboids_for(cube_id)
        if not existing:
            return []
        cube_attrs = set(cube.attr_names())
        combos = {m.attrs for m in existing if set(m.attrs) <= cube_attrs}
        combos.update(cuboid_attr_sets(cube))
        self.store.drop_cuboids(cube_id)
        base = self.base_rows(cube)
        rebuilt = []
        built_paths = set()
        for attrs in sorted(combos, key=lambda a: (len(a), a)):
            meta = self._build_cuboid(cube, attrs, base)
            built_paths.add(self.data_dir / meta.path)
            rebuilt.append(meta.key())
        cube_dir = self.data_dir / "cubes" / cube_id
        if cube_dir.exists():
            for path in cube_dir.glob("*.ndjson"):
                if path not in built_paths:
                    path.unlink()  # stale file from a renamed/dropped combination
        return rebuilt

    # -- queries --------------------------------------------------------------

    def choose_cuboid(self, spec: QuerySpec) -> CuboidMeta | None:
        """Smallest valid cuboid covering the query; None means answer from
        base. Ties break on fewer attributes, then the attribute list."""
        cube = self.store.get_cube_def(spec.cube_id)
        needed = set(spec.group_by) | {a for a, _, _ in spec.filters}
        self._check_attrs(cube, needed)
        candidates = [
            m for m in self.store.cuboids_for(spec.cube_id) if m.valid and needed <= set(m.attrs)
        ]
        if not candidates:
            return None
        return min(candidates, key=lambda m: (m.row_count, len(m.attrs), m.attrs))

    def _check_attrs(self, cube: CubeDefinition, attrs: set[str]) -> None:
        unknown = sorted(attrs - set(cube.attr_names()))
        if unknown:
            raise EngineError("INVALID_FILTER", f"unknown dimension attribute(s) {unknown}")

    def _attr_type(self, cube: CubeDefinition, attr: str) -> str:
        for mapping in self.store.mappings_for_target(cube.fact_dataset):
            if mapping.steps and mapping.steps[-1].kind == "LOAD_STAR":
                shape = self.store.mapping_shape(mapping)
                for fields in shape.dim_fields.values():
                    for f in fields:
                        if f.name == attr:
                            return f.value_type
        raise EngineError("INVALID_FILTER", f"attribute {attr!r} not in the star")

    def answer_query(self, spec: QuerySpec, force_cuboid: tuple[str, ...] | str | None = None) -> dict:
        """Filter, choose a covering cuboid, re-aggregate to the requested
        group-by, and return deterministically ordered rows.

        ``force_cuboid`` pins the source cuboid ("base" or an attribute
        tuple); it exists for verification, normal callers leave it unset.
        """
        cube = self.store.get_cube_def(spec.cube_id)
        needed = set(spec.group_by) | {a for a, _, _ in spec.filters}
        self._check_attrs(cube, needed)
        measure_by_name = {m.name: m for m in cube.measures}
        requested = list(spec.measures) if spec.measures else [m.name for m in cube.measures]
        unknown = sorted(set(requested) - set(measure_by_name))
        if unknown:
            raise EngineError("INVALID_FILTER", f"unknown measure(s) {unknown}")

        filters = self._typed_filters(cube, spec)

        if force_cuboid == "base":
            chosen = None
        elif force_cuboid is not None:
            key = tuple(sorted(force_cuboid))
            chosen = next(
                (m for m in self.store.cuboids_for(spec.cube_id) if m.attrs == key and m.valid), None
            )
            if chosen is None or not needed <= set(chosen.attrs):
                raise EngineError("INVALID_FILTER", f"cuboid {key} does not cover the query")
        else:
            chosen = self.choose_cuboid(spec)

        if chosen is None:
            rows = self.base_rows(cube)
            from_base = True
        else:
            rows = self._read_cuboid(chosen)
            from_base = False

        rows = [r for r in rows if all(f(r) for f in filters)]

        groups: dict[tuple, list[dict]] = {}
        for row in rows:
            key = tuple(row[a] for a in spec.group_by)
            groups.setdefault(key, []).append(row)

        out = []
        for key, members in groups.items():
            result = dict(zip(spec.group_by, key))
            for name in requested:
                m = measure_by_name[name]
                result[name] = (
                    self._measure_from_base(m, members) if from_base else self._measure_from_cuboid(m, members)
                )
            out.append(result)
        out.sort(key=lambda r: tuple((r[a] is None, r[a] if r[a] is not None else "") for a in spec.group_by))
        return {
            "rows": out,
            "cuboid": "base" if chosen is None else chosen.key(),
        }

    def _typed_filters(self, cube: CubeDefinition, spec: QuerySpec):
        ops = {
            "=": lambda a, b: a == b,
            "!=": lambda a, b: a != b,
            "<": lambda a, b: a < b,
            "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b,
            ">=": lambda a, b: a >= b,
        }
        filters = []
        for attr, op, literal in spec.filters:
            if op not in ops:
                raise EngineError("INVALID_FILTER", f"unknown operator {op!r}")
            if literal is None:
                raise EngineError("INVALID_FILTER", "filter literals must be non-null")
            attr_type = self._attr_type(cube, attr)
            try:
                typed = coerce_json_value(literal, attr_type)
            except ValueError as exc:
                raise EngineError("INVALID_FILTER", f"{attr}: {exc}") from exc
            fn = ops[op]

            def predicate(row, attr=attr, fn=fn, typed=typed):
                value = row[attr]
                return value is not None and fn(value, typed)

            filters.append(predicate)
        return filters

    @staticmethod
    def _measure_from_base(measure, members: list[dict]):
        values = [r[measure.field] for r in members if r[measure.field] is not None]
        if measure.fn == "COUNT":
            return len(values)
        if not values:
            return None
        if measure.fn == "SUM":
            return sum(values)
        if measure.fn == "MIN":
            return min(values)
        if measure.fn == "MAX":
            return max(values)
        return sum(values) / len(values)

    @staticmethod
    def _measure_from_cuboid(measure, members: list[dict]):
        if measure.fn == "AVG":
            sums = [r[f"{measure.name}__sum"] for r in members if r[f"{measure.name}__sum"] is not None]
            count = sum(r[f"{measure.name}__cnt"] for r in members)
            if count == 0:
                return None
            return sum(sums) / count
        cells = [r[measure.name] for r in members if r[measure.name] is not None]
        if measure.fn == "COUNT":
            return sum(cells) if cells else 0
        if not cells:
            return None
        if measure.fn == "SUM":
            return sum(cells)
        if measure.fn == "MIN":
            return min(cells)
        return max(cells)

    # -- navigation -----------------------------------------------------------

    def navigate(self, spec: QuerySpec, direction: str, attr: str) -> QuerySpec:
        """ROLL_UP swaps an attribute for the next-coarser one in its declared
        hierarchy (dropping it entirely at the coarsest); DRILL_DOWN swaps for
        the next-finer one and errors at the finest."""
        if direction not in ("ROLL_UP", "DRILL_DOWN"):
            raise EngineError("INVALID_FILTER", f"unknown direction {direction!r}")
        code = "NO_COARSER" if direction == "ROLL_UP" else "NO_FINER"
        cube = self.store.get_cube_def(spec.cube_id)
        by_attr = {a.attribute: a for a in cube.dimension_attrs}
        if attr not in by_attr:
            raise EngineError("INVALID_FILTER", f"attribute {attr!r} is not in cube {spec.cube_id!r}")
        if attr not in spec.group_by:
            raise EngineError(code, f"attribute {attr!r} is not in the current group-by")
        dim = by_attr[attr].dimension
        ladder = sorted(
            (a for a in cube.dimension_attrs if a.dimension == dim),
            key=lambda a: a.hierarchy_position,
        )
        names = [a.attribute for a in ladder]
        i = names.index(attr)
        if direction == "ROLL_UP":
            replacement = names[i + 1] if i + 1 < len(names) else None
        else:
            if i == 0:
                raise EngineError("NO_FINER", f"{attr!r} is already the finest attribute of {dim!r}")
            replacement = names[i - 1]
        group_by = []
        for g in spec.group_by:
            if g != attr:
                group_by.append(g)
            elif replacement is not None:
                group_by.append(replacement)
        return QuerySpec(spec.cube_id, tuple(group_by), spec.filters, spec.measures)
