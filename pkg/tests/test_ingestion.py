import json
import random

import pytest
from hypothesis import given, strategies as st

from evodw import ingestion
from evodw.errors import EngineError
from evodw.model import DatasetSchema, FieldDef
from evodw.values import infer_cell_type, lub

# ---------------------------------------------------------------------------
# parsing


def test_parse_delimited_counts_data_rows():
    records = ingestion.parse_delimited(b"a,b\n1,x\n2,y", ",")
    assert len(records) == 2
    assert records[0] == {"a": "1", "b": "x"}


def test_parse_delimited_empty_and_short_rows():
    assert ingestion.parse_delimited(b"", ",") == []
    records = ingestion.parse_delimited(b"a,b\n1", ",")
    assert records == [{"a": "1", "b": None}]
    records = ingestion.parse_delimited(b"a,b\n1,", ",")
    assert records == [{"a": "1", "b": None}]  # empty cell reads as null


def test_parse_delimited_rejects_ragged_long_rows():
    with pytest.raises(EngineError) as e:
        ingestion.parse_delimited(b"a,b\n1,2,3", ",")
    assert e.value.code == "PARSE_ERROR"


def test_parse_json_records():
    data = b'{"a": 1}\n{"a": 2, "b": "x"}\n'
    assert ingestion.parse_json_records(data) == [{"a": 1}, {"a": 2, "b": "x"}]
    with pytest.raises(EngineError):
        ingestion.parse_json_records(b'{"a": 1}\nnot json\n')
    with pytest.raises(EngineError):
        ingestion.parse_json_records(b"[1, 2]\n")


# ---------------------------------------------------------------------------
# inference

# Independent oracle: type one value at a time, fold with the lattice lub.
_CHAIN = {"NULL": 0, "BOOLEAN": 1, "INTEGER": 2, "DECIMAL": 3, "TEXT": 4}


def oracle_cell_type(cell):
    if cell is None or cell == "":
        return "NULL"
    if cell in ("true", "false"):
        return "BOOLEAN"
    try:
        int(cell)
        return "INTEGER"
    except ValueError:
        pass
    try:
        float(cell)
        return "DECIMAL"
    except ValueError:
        pass
    import re

    if re.match(r"^\d{4}-\d{2}-\d{2}(T\d{2}:\d{2}:\d{2})?$", cell):
        return "TIMESTAMP"
    return "TEXT"


def oracle_fold(types):
    folded = "NULL"
    for t in types:
        if folded == t or t == "NULL":
            continue
        if folded == "NULL":
            folded = t
        elif folded == "TIMESTAMP" or t == "TIMESTAMP":
            folded = "TEXT"
        else:
            folded = folded if _CHAIN[folded] >= _CHAIN[t] else t
    return folded if folded != "NULL" else "TEXT"


def _infer(columns: dict[str, list]) -> dict[str, FieldDef]:
    n = max(len(v) for v in columns.values())
    records = [{k: v[i] for k, v in columns.items() if i < len(v)} for i in range(n)]
    return {f.name: f for f in ingestion.infer_schema(records, "DELIMITED")}


def test_integer_column():
    f = _infer({"a": ["1", "2", "3"]})["a"]
    assert (f.value_type, f.nullable) == ("INTEGER", False)


def test_lattice_lub_decimal():
    f = _infer({"a": ["1", "2.5"]})["a"]
    assert f.value_type == "DECIMAL"


def test_missing_key_makes_nullable():
    # key present in 2 of 3 JSON records -> TEXT, nullable
    records = [{"k": "x"}, {"k": "y"}, {}]
    fields = {f.name: f for f in ingestion.infer_schema(records, "JSON_RECORDS")}
    assert fields["k"].value_type == "TEXT"
    assert fields["k"].nullable is True


def test_timestamp_shape_and_conflict():
    assert _infer({"a": ["2024-01-01", "2024-02-03"]})["a"].value_type == "TIMESTAMP"
    assert _infer({"a": ["2024-01-01", "plain"]})["a"].value_type == "TEXT"


def test_boolean_integer_chain():
    assert _infer({"a": ["true", "1"]})["a"].value_type == "INTEGER"


def test_all_null_column_defaults_to_text_nullable():
    f = _infer({"a": ["", ""]})["a"]
    assert (f.value_type, f.nullable) == ("TEXT", True)


def test_raw_text_has_no_inferable_schema():
    with pytest.raises(EngineError) as e:
        ingestion.infer_schema([], "RAW_TEXT")
    assert e.value.code == "UNPARSEABLE"


def test_inference_matches_per_value_oracle_on_random_batches():
    rng = random.Random(20240811)
    pool = ["1", "7", "2.5", "true", "false", "2024-01-02", "word", "", "99", "0.125"]
    for _ in range(200):
        n_cols, n_rows = rng.randint(1, 5), rng.randint(1, 30)
        columns = {f"c{i}": [rng.choice(pool) for _ in range(n_rows)] for i in range(n_cols)}
        inferred = _infer(columns)
        for name, values in columns.items():
            expected = oracle_fold([oracle_cell_type(v) for v in values])
            assert inferred[name].value_type == expected, (name, values)
            assert inferred[name].nullable == any(v == "" for v in values)


@given(
    st.lists(st.sampled_from(["1", "2.5", "true", "2024-01-01", "txt", ""]), min_size=1, max_size=8),
    st.lists(st.sampled_from(["1", "2.5", "true", "2024-01-01", "txt", ""]), min_size=0, max_size=8),
)
def test_inference_monotone_under_appends(prefix, suffix):
    """Appending records can only move a column's type up the lattice."""

    def fold(cells):
        t = "NULL"
        for cell in cells:
            t = lub(t, infer_cell_type(cell))
        return t

    before = fold(prefix)
    after = fold(prefix + suffix)
    assert lub(before, after) == after  # 'after' is an upper bound of 'before'
    if any(c == "" for c in prefix):
        assert _infer({"a": prefix + suffix})["a"].nullable


# ---------------------------------------------------------------------------
# change detection


def schema(*fields: tuple[str, str]) -> DatasetSchema:
    return DatasetSchema("d0", 0, tuple(FieldDef(n, t) for n, t in fields), 1, "SEMISTRUCTURED")


def fields(*pairs: tuple[str, str]) -> list[FieldDef]:
    return [FieldDef(n, t) for n, t in pairs]


def test_detection_identical_is_empty():
    s = schema(("a", "INTEGER"), ("b", "TEXT"))
    assert ingestion.detect_changes(fields(("a", "INTEGER"), ("b", "TEXT")), s) == []


def test_detection_added():
    out = ingestion.detect_changes(fields(("a", "INTEGER"), ("c", "DECIMAL")), schema(("a", "INTEGER")))
    assert [(t, p["attribute"]) for t, p in out] == [("ATTRIBUTE_ADDED", "c")]
    assert out[0][1]["value_type"] == "DECIMAL"


def test_detection_rename_triple():
    out = ingestion.detect_changes(
        fields(("a", "INTEGER"), ("c", "TEXT")), schema(("a", "INTEGER"), ("b", "TEXT"))
    )
    kinds = [t for t, _ in out]
    assert kinds == ["ATTRIBUTE_REMOVED", "ATTRIBUTE_ADDED", "RENAME_CANDIDATE"]
    cand = out[2][1]
    assert (cand["from_attribute"], cand["to_attribute"]) == ("b", "c")


def test_detection_type_changed():
    out = ingestion.detect_changes(fields(("a", "DECIMAL")), schema(("a", "INTEGER")))
    assert [(t, p["old_type"], p["new_type"]) for t, p in out] == [
        ("ATTRIBUTE_TYPE_CHANGED", "INTEGER", "DECIMAL")
    ]


def _random_schema(rng):
    n = rng.randint(1, 6)
    types = ["BOOLEAN", "INTEGER", "DECIMAL", "TEXT", "TIMESTAMP"]
    return [FieldDef(f"f{i}", rng.choice(types)) for i in range(n)]


def test_detection_soundness_random():
    rng = random.Random(7)
    for _ in range(100):
        flds = _random_schema(rng)
        s = DatasetSchema("d0", 0, tuple(flds), 1, "SEMISTRUCTURED")
        assert ingestion.detect_changes(list(flds), s) == []


def test_detection_single_edit_completeness():
    """Every single-edit mutation yields exactly the matching record (plus a
    rename candidate only when an add/remove pair shares a type)."""
    rng = random.Random(99)
    for _ in range(150):
        flds = _random_schema(rng)
        s = DatasetSchema("d0", 0, tuple(flds), 1, "SEMISTRUCTURED")
        edit = rng.choice(["add", "remove", "retype"])
        mutated = list(flds)
        if edit == "add":
            new = FieldDef("fresh", rng.choice(["INTEGER", "TEXT"]))
            mutated.append(new)
            out = ingestion.detect_changes(mutated, s)
            assert [(t, p["attribute"]) for t, p in out] == [("ATTRIBUTE_ADDED", "fresh")]
        elif edit == "remove":
            gone = mutated.pop(rng.randrange(len(mutated)))
            out = ingestion.detect_changes(mutated, s)
            assert out == [("ATTRIBUTE_REMOVED", {"dataset": "d0", "attribute": gone.name})]
        else:
            i = rng.randrange(len(mutated))
            old = mutated[i]
            other = rng.choice([t for t in ["BOOLEAN", "INTEGER", "DECIMAL", "TEXT"] if t != old.value_type])
            mutated[i] = FieldDef(old.name, other)
            out = ingestion.detect_changes(mutated, s)
            assert [(t, p["attribute"]) for t, p in out] == [("ATTRIBUTE_TYPE_CHANGED", old.name)]


def test_rename_candidate_symmetry_random():
    """RENAME_CANDIDATE(x -> y) appears iff REMOVED(x) and ADDED(y) share a
    value type, exactly once per such pair (oracle: exhaustive pairing)."""
    rng = random.Random(5)
    for _ in range(100):
        registered = _random_schema(rng)
        s = DatasetSchema("d0", 0, tuple(registered), 1, "SEMISTRUCTURED")
        observed = [f for f in registered if rng.random() > 0.3]
        extras = [
            FieldDef(f"new{i}", rng.choice(["BOOLEAN", "INTEGER", "DECIMAL", "TEXT", "TIMESTAMP"]))
            for i in range(rng.randint(0, 3))
        ]
        observed += extras
        out = ingestion.detect_changes(observed, s)
        removed = [p["attribute"] for t, p in out if t == "ATTRIBUTE_REMOVED"]
        added = [p["attribute"] for t, p in out if t == "ATTRIBUTE_ADDED"]
        candidates = {(p["from_attribute"], p["to_attribute"]) for t, p in out if t == "RENAME_CANDIDATE"}
        types = {f.name: f.value_type for f in registered + extras}
        expected = {
            (x, y) for x in removed for y in added if types[x] == types[y]
        }
        assert candidates == expected
