import csv

from evodw.report import render_report


def test_report_writes_csv_and_png(tmp_path, loaded_engine):
    spec = {"group_by": ["city"], "measures": ["total_units", "total_revenue"]}
    result = loaded_engine.query("sales_cube", spec)
    paths = render_report(result, spec, tmp_path / "out", name="units_by_city")
    csv_path, png_path = paths
    assert csv_path.name == "units_by_city.csv"
    with csv_path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["city", "total_units", "total_revenue"]
    assert [r[0] for r in rows[1:]] == ["Riga", "Tallinn", "Vilnius"]
    assert png_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_report_grand_total(tmp_path, loaded_engine):
    spec = {"group_by": [], "measures": ["total_units"]}
    result = loaded_engine.query("sales_cube", spec)
    csv_path, png_path = render_report(result, spec, tmp_path / "out")
    with csv_path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows == [["total_units"], ["15"]]
    assert png_path.stat().st_size > 0


def test_report_handles_null_groups(tmp_path, loaded_engine):
    # category is nullable; force a null member through a raw batch
    from conftest import csv_bytes

    loaded_engine.ingest("pos", csv_bytes("2024-03-01,Riga,,2,1.0"))
    for _ in range(4):
        loaded_engine.tick()
    spec = {"group_by": ["category"], "measures": ["n"]}
    result = loaded_engine.query("sales_cube", spec)
    csv_path, _ = render_report(result, spec, tmp_path / "out")
    text = csv_path.read_text()
    assert "food" in text and "tools" in text
