"""Acceptance suite: nine scenario/property criteria, one pass line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Tolerances: INTEGER SUM/COUNT/MIN/MAX compare exactly; DECIMAL and
AVG compare at relative error <= 1e-9.
"""

from __future__ import annotations

import contextlib
import io
import json
import random
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import BASE_CSV, LEVELS, build_sales_engine, csv_bytes, seed_sales_metadata
from test_adaptation import tree_hashes
from test_cube import _OPS, MEASURES, flat_answer, random_rows, rows_close, star_engine
from evodw.api import create_app
from evodw.cli import main as cli_main
from evodw.config import EngineConfig
from evodw.engine import Engine
from evodw.errors import EngineError

REL_TOL = 1e-9
N_INSTANCES = 100


def _pass(criterion: int, text: str) -> None:
    print(f"PASS criterion {criterion}: {text}")


# ---------------------------------------------------------------------------
# criteria 1 & 2: randomized cube instances


class Instance:
    def __init__(self, engine, rows, queries):
        self.engine = engine
        self.rows = rows
        self.queries = queries


@pytest.fixture(scope="module")
def oracle_instances(tmp_path_factory):
    root = tmp_path_factory.mktemp("cube-oracle")
    rng = random.Random(0xDA7A)
    started = time.monotonic()
    instances = []
    for i in range(N_INSTANCES):
        attrs = rng.randint(0, 5)
        rows = random_rows(rng, attrs, rng.randint(0, 1000))
        engine = star_engine(root / f"i{i:03d}", attrs, rows, max_attrs=rng.randint(0, attrs))
        queries = []
        for _ in range(3):
            group_by = rng.sample([f"a{k}" for k in range(attrs)], rng.randint(0, attrs))
            filters = []
            for _ in range(rng.randint(0, 2)):
                filters.append(
                    (f"a{rng.randrange(attrs)}", rng.choice(list(_OPS)), rng.choice(["u", "v", "w"]))
                ) if attrs else None
            requested = rng.sample(MEASURES, rng.randint(1, len(MEASURES)))
            queries.append((group_by, filters, requested))
        instances.append(Instance(engine, rows, queries))
    return instances, started


def test_criterion_1_cube_oracle_equivalence(oracle_instances):
    instances, started = oracle_instances
    checked = 0
    for inst in instances:
        for group_by, filters, requested in inst.queries:
            got = inst.engine.query(
                "c",
                {
                    "group_by": group_by,
                    "filters": [list(f) for f in filters],
                    "measures": [m[0] for m in requested],
                },
            )
            expected = flat_answer(inst.rows, group_by, filters, requested)
            assert rows_close(got["rows"], expected, rel=REL_TOL), (group_by, filters, got["cuboid"])
            checked += 1
    elapsed = time.monotonic() - started
    assert len(instances) >= 100
    assert elapsed < 60.0, f"oracle suite took {elapsed:.1f}s"
    _pass(1, f"{checked} randomized queries over {len(instances)} instances match "
             f"brute force (rel tol {REL_TOL}) in {elapsed:.1f}s")


def test_criterion_2_cuboid_choice_independence(oracle_instances, tmp_path):
    instances, _ = oracle_instances
    forced = 0
    for inst in instances:
        group_by, filters, requested = inst.queries[0]
        needed = set(group_by) | {a for a, _, _ in filters}
        covers = [
            m.attrs for m in inst.engine.store.cuboids_for("c") if needed <= set(m.attrs) and m.valid
        ]
        spec = {
            "group_by": group_by,
            "filters": [list(f) for f in filters],
            "measures": [m[0] for m in requested],
        }
        reference = inst.engine.query("c", {**spec, "use_cuboid": "base"})["rows"]
        for cover in covers:
            got = inst.engine.query("c", {**spec, "use_cuboid": list(cover)})["rows"]
            assert rows_close(reference, got, rel=REL_TOL), (group_by, filters, cover)
            forced += 1
    # lattice cardinality 2^n for n = 0..4
    rng = random.Random(123)
    for n in range(5):
        engine = star_engine(tmp_path / f"lat{n}", n, random_rows(rng, n, 40), max_attrs=n)
        assert len(engine.store.cuboids_for("c")) == 2**n
    _pass(2, f"{forced} forced-cuboid answers identical to base; lattice counts 2^n verified for n=0..4")


# ---------------------------------------------------------------------------
# criterion 3: change detection suite


def test_criterion_3_change_detection_suite(tmp_path):
    def fresh(name):
        engine = build_sales_engine(tmp_path / name)
        return engine

    def injected(engine, payload: bytes):
        out = engine.ingest("pos", payload)
        return [
            (engine.store.get_change(c).change_type, engine.store.get_change(c).payload)
            for c in out["changes"]
        ]

    # DATASET_ADDED: the wrapper first sees data for the dataset
    engine = fresh("t-added")
    got = injected(engine, BASE_CSV.encode())
    assert got == [("DATASET_ADDED", {"dataset": "sales_raw"})]

    # ATTRIBUTE_ADDED
    got = injected(engine, csv_bytes("2024-02-04,Riga,food,1,2.0,X", header="day,city,category,units,price,promo"))
    assert got == [
        ("ATTRIBUTE_ADDED", {"dataset": "sales_raw", "attribute": "promo", "value_type": "TEXT", "nullable": False})
    ]

    # ATTRIBUTE_REMOVED
    engine = fresh("t-removed")
    injected(engine, BASE_CSV.encode())
    got = injected(engine, csv_bytes("2024-02-05,Riga,2,3.0", header="day,city,units,price"))
    assert got == [("ATTRIBUTE_REMOVED", {"dataset": "sales_raw", "attribute": "category"})]

    # ATTRIBUTE_TYPE_CHANGED
    engine = fresh("t-retyped")
    injected(engine, BASE_CSV.encode())
    got = injected(engine, csv_bytes("2024-02-05,Riga,food,2.5,2.0"))
    assert got == [
        (
            "ATTRIBUTE_TYPE_CHANGED",
            {"dataset": "sales_raw", "attribute": "units", "old_type": "INTEGER", "new_type": "DECIMAL"},
        )
    ]

    # RENAME_CANDIDATE: removed + added + candidate triple
    engine = fresh("t-renamed")
    injected(engine, BASE_CSV.encode())
    got = injected(engine, csv_bytes("2024-02-05,Riga,food,1,2.0", header="day,town,category,units,price"))
    assert got == [
        ("ATTRIBUTE_REMOVED", {"dataset": "sales_raw", "attribute": "city"}),
        ("ATTRIBUTE_ADDED", {"dataset": "sales_raw", "attribute": "town", "value_type": "TEXT", "nullable": False}),
        (
            "RENAME_CANDIDATE",
            {"dataset": "sales_raw", "from_attribute": "city", "to_attribute": "town", "value_type": "TEXT"},
        ),
    ]

    # DATASET_REMOVED after 3 consecutive empty pulls
    engine = fresh("t-gone")
    injected(engine, BASE_CSV.encode())
    assert injected(engine, b"") == []
    assert injected(engine, b"") == []
    got = injected(engine, b"")
    assert got == [("DATASET_REMOVED", {"dataset": "sales_raw"})]

    _pass(3, "all six change types detected with exactly the expected record sets")


# ---------------------------------------------------------------------------
# criterion 4: end-to-end additive evolution

FIVE_QUERIES = (
    {"group_by": [], "measures": ["total_units", "total_revenue", "avg_revenue", "n"]},
    {"group_by": ["city"], "measures": ["total_units"]},
    {"group_by": ["month"], "measures": ["total_revenue", "n"]},
    {"group_by": ["city", "category"], "measures": ["total_units"]},
    {"group_by": ["day"], "filters": [["category", "=", "food"]], "measures": ["avg_revenue"]},
)


def test_criterion_4_end_to_end_additive_evolution(tmp_path):
    engine = build_sales_engine(tmp_path / "dw")
    engine.ingest("pos", BASE_CSV.encode())
    out = engine.ingest(
        "pos", csv_bytes("2024-02-04,Riga,food,1,2.0,SPRING", header="day,city,category,units,price,promo")
    )
    change_id = next(
        c for c in out["changes"] if engine.store.get_change(c).change_type == "ATTRIBUTE_ADDED"
    )
    for _ in range(4):
        engine.tick()
    engine.materialize("sales_cube")
    before = [json.dumps(engine.query("sales_cube", q), sort_keys=True) for q in FIVE_QUERIES]

    options = engine.propose(change_id)
    pc = next(o for o in options if o["option_kind"] == "PROPAGATE_ADD")["pc_id"]
    engine.apply(pc, {}, "dev")
    for _ in range(4):
        engine.tick()

    after = [json.dumps(engine.query("sales_cube", q), sort_keys=True) for q in FIVE_QUERIES]
    assert before == after, "pre-change answers must be bit-identical"

    records = engine.dataset_records(1, "sales_clean")
    pre_change = [r for r in records if r["day"] != "2024-02-04"]
    new = [r for r in records if r["day"] == "2024-02-04"]
    assert len(pre_change) == 5 and all(r["promo"] is None for r in pre_change)
    assert [r["promo"] for r in new] == ["SPRING"]
    assert engine.validate() == []
    _pass(4, "5 answers bit-identical across PROPAGATE_ADD; new attribute null for pre-change rows")


# ---------------------------------------------------------------------------
# criterion 5: rename round-trip


def test_criterion_5_rename_round_trip(tmp_path):
    # The units>0 filter keeps the drift batch (all units=0) out of the
    # highway, so the effective ELT inputs stay frozen across the rename.
    engine = build_sales_engine(tmp_path / "dw", clean_filter="units > 0")
    engine.ingest("pos", BASE_CSV.encode())
    for _ in range(4):
        engine.tick()
    pre_l2 = engine.dataset_records(2, "sales_enriched")
    pre_fact = engine.dataset_records(3, "sales_star")
    pre_city_dim = engine.dataset_records(3, "sales_star", table="city")

    out = engine.ingest(
        "pos", csv_bytes("2024-02-05,Riga,food,0,2.0", header="day,town,category,units,price")
    )
    candidate = next(
        c for c in out["changes"] if engine.store.get_change(c).change_type == "RENAME_CANDIDATE"
    )
    pc = next(o for o in engine.propose(candidate) if o["option_kind"] == "RENAME_CONFIRM")["pc_id"]
    engine.apply(pc, {"confirm": True}, "dev")
    for _ in range(4):
        engine.tick()

    def relabel(rows):
        return [{("town" if k == "city" else k): v for k, v in r.items()} for r in rows]

    assert engine.dataset_records(2, "sales_enriched") == relabel(pre_l2)
    assert engine.dataset_records(3, "sales_star") == pre_fact  # keys and measures untouched
    assert engine.dataset_records(3, "sales_star", table="city") == relabel(pre_city_dim)
    assert engine.validate() == []
    _pass(5, "post-rename ELT output equals the pre-change output modulo the renamed column")


# ---------------------------------------------------------------------------
# criterion 6: latency law


def test_criterion_6_latency_law(tmp_path):
    engine = build_sales_engine(tmp_path / "dw")
    engine.ingest("pos", BASE_CSV.encode())
    assert [l.tick_period for l in LEVELS[1:]] == [1, 2, 4]
    for _ in range(8):
        engine.tick()
    counts = [
        engine.store.refresh_count(ds) for ds in ("sales_clean", "sales_enriched", "sales_star")
    ]
    assert counts == [8, 4, 2]
    _pass(6, "tick_periods (1,2,4) give refresh counts (8,4,2) after 8 ticks")


# ---------------------------------------------------------------------------
# criterion 7: apply atomicity


def test_criterion_7_apply_atomicity(tmp_path):
    engine = build_sales_engine(tmp_path / "dw", fault_injection="ABORT_MID_APPLY")
    engine.ingest("pos", BASE_CSV.encode())
    for _ in range(4):
        engine.tick()
    engine.materialize("sales_cube")
    out = engine.ingest(
        "pos", csv_bytes("2024-02-04,Riga,food,1,2.0,X", header="day,city,category,units,price,promo")
    )
    change_id = next(
        c for c in out["changes"] if engine.store.get_change(c).change_type == "ATTRIBUTE_ADDED"
    )
    pc = next(o for o in engine.propose(change_id) if o["option_kind"] == "PROPAGATE_ADD")["pc_id"]

    pre_export = engine.export_bytes()
    pre_files = tree_hashes(engine.data_dir)
    with pytest.raises(EngineError) as e:
        engine.apply(pc, {}, "dev")
    assert e.value.code == "APPLY_FAILED"
    assert engine.export_bytes() == pre_export
    assert tree_hashes(engine.data_dir) == pre_files
    assert engine.validate() == []
    _pass(7, "aborted apply leaves export and data-file hashes byte-identical; zero integrity violations")


# ---------------------------------------------------------------------------
# criterion 8: metadata round-trip


def test_criterion_8_metadata_round_trip(tmp_path):
    sections = {"highway", "cubes", "mappings", "source_changes", "adaptation_rules", "potential_changes"}

    empty = Engine(EngineConfig(data_dir=tmp_path / "empty", levels=LEVELS))
    one = empty.export_bytes()
    assert set(json.loads(one)) == sections
    empty.import_document(json.loads(one))
    assert empty.export_bytes() == one

    engine = build_sales_engine(tmp_path / "full")
    engine.ingest("pos", BASE_CSV.encode())
    out = engine.ingest(
        "pos", csv_bytes("2024-02-04,Riga,food,1,2.0,X", header="day,city,category,units,price,promo")
    )
    for _ in range(4):
        engine.tick()
    engine.materialize("sales_cube")
    cid = next(c for c in out["changes"] if engine.store.get_change(c).change_type == "ATTRIBUTE_ADDED")
    pc = next(o for o in engine.propose(cid) if o["option_kind"] == "PROPAGATE_ADD")["pc_id"]
    engine.apply(pc, {}, "dev")
    two = engine.export_bytes()
    assert set(json.loads(two)) == sections
    engine.import_document(json.loads(two))
    assert engine.export_bytes() == two
    _pass(8, "export -> import -> export byte-identical on empty and populated stores; six sections present")


# ---------------------------------------------------------------------------
# criterion 9: API/CLI parity


def _seed_document(tmp_path) -> dict:
    throwaway = build_sales_engine(tmp_path / "seed")
    return json.loads(throwaway.export_bytes())


def _scenario_via_api(tmp_path, seed: dict) -> bytes:
    engine = Engine(EngineConfig(data_dir=tmp_path / "api", levels=LEVELS))
    client = TestClient(create_app(engine))
    assert client.post("/metadata/import", content=json.dumps(seed).encode()).status_code == 200
    client.post("/sources/pos/batches", content=BASE_CSV.encode())
    r = client.post(
        "/sources/pos/batches",
        content=csv_bytes("2024-02-04,Riga,food,1,2.0,SPRING", header="day,city,category,units,price,promo"),
    )
    cid = r.json()["changes"][0]
    for _ in range(4):
        client.post("/elt/tick")
    options = client.post(f"/changes/{cid}/propose").json()
    pc = next(o for o in options if o["option_kind"] == "PROPAGATE_ADD")["pc_id"]
    client.post(f"/changes/{cid}/options/{pc}/apply", json={"parameters": {}, "actor": "dev"})
    for _ in range(4):
        client.post("/elt/tick")
    return client.get("/metadata/export").content


def _scenario_via_cli(tmp_path, seed: dict) -> bytes:
    cfg = tmp_path / "engine.json"
    cfg.write_text(
        json.dumps(
            {
                "data_dir": str(tmp_path / "cli"),
                "http_port": 8702,
                "levels": [{"level": l.level, "tick_period": l.tick_period} for l in LEVELS],
            }
        )
    )
    seed_file = tmp_path / "seed.json"
    seed_file.write_text(json.dumps(seed))
    base = tmp_path / "base.csv"
    base.write_bytes(BASE_CSV.encode())
    drift = tmp_path / "drift.csv"
    drift.write_bytes(
        csv_bytes("2024-02-04,Riga,food,1,2.0,SPRING", header="day,city,category,units,price,promo")
    )

    def run(*args) -> str:
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = cli_main(["--config", str(cfg), *args])
        assert code == 0, buf.getvalue()
        return buf.getvalue()

    run("import", "--file", str(seed_file))
    run("ingest", "--source", "pos", "--file", str(base))
    out = json.loads(run("ingest", "--source", "pos", "--file", str(drift)))
    cid = out["changes"][0]
    for _ in range(4):
        run("tick")
    options = json.loads(run("changes", "propose", cid))
    pc = next(o for o in options if o["option_kind"] == "PROPAGATE_ADD")["pc_id"]
    run("apply", "--change", cid, "--option", pc, "--actor", "dev")
    for _ in range(4):
        run("tick")
    export_file = tmp_path / "cli-export.json"
    run("export", "--out", str(export_file))
    return export_file.read_bytes()


def test_criterion_9_api_cli_parity(tmp_path):
    seed = _seed_document(tmp_path)
    via_api = _scenario_via_api(tmp_path, seed)
    via_cli = _scenario_via_cli(tmp_path, seed)
    assert via_api == via_cli
    _pass(9, "the additive-evolution scenario yields byte-identical exports via HTTP and CLI")
