import io
import contextlib
import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import BASE_CSV, LEVELS, build_sales_engine, csv_bytes
from evodw.api import create_app
from evodw.cli import main as cli_main
from evodw.config import load_config, parse_config
from evodw.engine import Engine
from evodw.errors import EngineError

# -- config ------------------------------------------------------------------


def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data_dir": str(tmp_path / "dw"), "http_port": 8699}))
    cfg = load_config(p)
    assert cfg.max_attrs == 2
    assert cfg.fault_injection == "NONE"
    assert [l.level for l in cfg.levels] == [0, 1, 2, 3]


def test_config_rejects_decreasing_periods(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(
        json.dumps(
            {
                "data_dir": str(tmp_path / "dw"),
                "levels": [
                    {"level": 0, "tick_period": 1},
                    {"level": 1, "tick_period": 4},
                    {"level": 2, "tick_period": 2},
                ],
            }
        )
    )
    with pytest.raises(EngineError) as e:
        load_config(p)
    assert e.value.code == "CONFIG_INVALID"
    assert "levels" in e.value.message


def test_config_missing_data_dir(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"http_port": 8700}))
    with pytest.raises(EngineError) as e:
        load_config(p)
    assert e.value.code == "CONFIG_INVALID"
    assert "data_dir" in e.value.message


def test_config_bad_values():
    for doc, key in (
        ({"data_dir": "x", "http_port": "y"}, "http_port"),
        ({"data_dir": "x", "max_attrs": -1}, "max_attrs"),
        ({"data_dir": "x", "fault_injection": "SOMETIMES"}, "fault_injection"),
        ({"data_dir": "x", "levels": [{"level": 1, "tick_period": 1}]}, "levels"),
    ):
        with pytest.raises(EngineError) as e:
            parse_config(doc)
        assert key in e.value.message


# -- API ---------------------------------------------------------------------


@pytest.fixture
def client(sales_engine):
    return TestClient(create_app(sales_engine))


def test_changes_empty_on_fresh_store(client):
    assert client.get("/changes", params={"status": "PENDING"}).json() == []


def test_tick_endpoint_advances_once(client, sales_engine):
    client.post("/sources/pos/batches", content=BASE_CSV.encode())
    for _ in range(8):
        assert client.post("/elt/tick").status_code == 200
    counts = [
        sales_engine.store.refresh_count(ds)
        for ds in ("sales_clean", "sales_enriched", "sales_star")
    ]
    assert counts == [8, 4, 2]


def test_missing_parameter_maps_to_422(client):
    client.post("/sources/pos/batches", content=BASE_CSV.encode())
    r = client.post(
        "/sources/pos/batches",
        content=csv_bytes("2024-02-05,Riga,2,3.0", header="day,city,units,price"),
    )
    cid = r.json()["changes"][0]
    options = client.post(f"/changes/{cid}/propose").json()
    pc = next(o for o in options if o["option_kind"] == "MAP_WITH_DEFAULT")["pc_id"]
    r = client.post(f"/changes/{cid}/options/{pc}/apply", json={"parameters": {}})
    assert r.status_code == 422
    assert r.json()["error"]["code"] == "MISSING_PARAMETER"


def test_error_codes_are_stable(client):
    assert client.get("/levels/9/datasets").status_code == 404
    assert client.post("/sources/ghost/batches", content=b"").status_code == 404
    r = client.post("/sources", json={"source_id": "pos", "format": "DELIMITED", "level0_dataset": "sales_raw"})
    assert r.status_code == 409
    assert r.json()["error"]["code"] == "DUPLICATE_SOURCE"
    r = client.post("/cubes/nope/query", json={"group_by": []})
    assert r.status_code == 404
    assert r.json()["error"]["code"] == "UNKNOWN_CUBE"
    r = client.post("/metadata/import", content=b"{broken")
    assert r.status_code == 400
    assert r.json()["error"]["code"] == "MALFORMED_DOCUMENT"


def test_export_import_endpoints_round_trip(client):
    client.post("/sources/pos/batches", content=BASE_CSV.encode())
    client.post("/elt/tick")
    exported = client.get("/metadata/export").content
    loaded = client.post("/metadata/import", content=exported).json()["loaded"]
    assert loaded > 0
    assert client.get("/metadata/export").content == exported


def test_records_endpoint_star_tables(client):
    client.post("/sources/pos/batches", content=BASE_CSV.encode())
    for _ in range(4):
        client.post("/elt/tick")
    fact = client.get("/levels/3/datasets/sales_star/records").json()
    assert len(fact) == 5 and "date_key" in fact[0]
    dim = client.get("/levels/3/datasets/sales_star/records", params={"table": "city"}).json()
    assert [r["city"] for r in dim] == ["Riga", "Vilnius", "Tallinn"]


# -- statelessness -----------------------------------------------------------------


def test_restart_reproduces_reads(tmp_path):
    engine = build_sales_engine(tmp_path / "dw")
    engine.ingest("pos", BASE_CSV.encode())
    for _ in range(4):
        engine.tick()
    engine.materialize("sales_cube")
    export_one = engine.export_bytes()
    answers_one = engine.query("sales_cube", {"group_by": ["city"], "measures": ["total_units"]})

    from evodw.config import EngineConfig

    reborn = Engine(EngineConfig(data_dir=tmp_path / "dw", levels=LEVELS))
    assert reborn.export_bytes() == export_one
    assert reborn.query("sales_cube", {"group_by": ["city"], "measures": ["total_units"]}) == answers_one
    assert reborn.dataset_records(1, "sales_clean") == engine.dataset_records(1, "sales_clean")


# -- CLI ---------------------------------------------------------------------------


@pytest.fixture
def cli_env(tmp_path):
    dw = tmp_path / "dw"
    build_sales_engine(dw)
    cfg = tmp_path / "engine.json"
    cfg.write_text(
        json.dumps(
            {
                "data_dir": str(dw),
                "http_port": 8701,
                "levels": [{"level": l.level, "tick_period": l.tick_period} for l in LEVELS],
            }
        )
    )
    batch = tmp_path / "batch.csv"
    batch.write_bytes(BASE_CSV.encode())

    def run(*args):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = cli_main(["--config", str(cfg), *args])
        return code, buf.getvalue()

    return run, batch


def test_cli_changes_list_empty(cli_env):
    run, _ = cli_env
    code, out = run("changes", "list", "--status", "PENDING")
    assert code == 0
    assert json.loads(out) == []


def test_cli_apply_missing_parameter(cli_env):
    run, batch = cli_env
    run("ingest", "--source", "pos", "--file", str(batch))
    # drift batch dropping a column
    drop = batch.parent / "drop.csv"
    drop.write_bytes(csv_bytes("2024-02-05,Riga,2,3.0", header="day,city,units,price"))
    code, out = run("ingest", "--source", "pos", "--file", str(drop))
    cid = json.loads(out)["changes"][0]
    code, out = run("changes", "propose", cid)
    pc = next(o for o in json.loads(out) if o["option_kind"] == "MAP_WITH_DEFAULT")["pc_id"]
    code, out = run("apply", "--change", cid, "--option", pc)
    assert code == 1
    assert json.loads(out)["error"]["code"] == "MISSING_PARAMETER"
    code, out = run("apply", "--change", cid, "--option", pc, "--param", "default=unknown")
    assert code == 0
    assert json.loads(out)["status"] == "APPLIED"


def test_cli_unknown_subcommand_exits_2(cli_env):
    run, _ = cli_env
    code, _ = run("definitely-not-a-command")
    assert code == 2


def test_cli_export_matches_engine(cli_env):
    run, batch = cli_env
    run("ingest", "--source", "pos", "--file", str(batch))
    run("tick")
    out_file = batch.parent / "export.json"
    code, _ = run("export", "--out", str(out_file))
    assert code == 0
    cfg = json.loads((batch.parent / "engine.json").read_text())
    from evodw.config import parse_config

    engine = Engine(parse_config(cfg))
    assert out_file.read_bytes() == engine.export_bytes()
