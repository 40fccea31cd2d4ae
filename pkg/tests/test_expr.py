import pytest
from hypothesis import given, strategies as st

from evodw import expr
from evodw.errors import EngineError


def ev(source, record=None):
    return expr.evaluate(source, record or {})


def test_precedence():
    assert ev("1 + 2 * 3") == 7
    assert ev("(1 + 2) * 3") == 9
    assert ev("2 * 3 % 4") == 2
    assert ev("1 + 2 < 4") is True
    assert ev("not 1 > 2") is True
    assert ev("true or false and false") is True  # and binds tighter


def test_integer_division_yields_decimal():
    v = ev("6 / 3")
    assert v == 2.0 and isinstance(v, float)
    assert ev("1 / 3") == pytest.approx(1 / 3)


def test_division_by_zero_yields_null():
    assert ev("1 / 0") is None
    assert ev("1 % 0") is None
    assert ev("1.5 / 0") is None


def test_substr_is_one_based():
    assert ev('substr("warehouse", 1, 4)') == "ware"
    assert ev('substr("warehouse", 5, 5)') == "house"
    assert ev('substr("abc", 1, 0)') == ""


def test_coalesce():
    assert ev("coalesce(b, 5)", {"b": None}) == 5
    assert ev("coalesce(b, 5)", {"b": 7}) == 7
    assert ev("coalesce(null, null)") is None


def test_text_concat():
    assert ev('"a" || "b" || "c"') == "abc"
    with pytest.raises(EngineError) as e:
        ev('1 || "b"')
    assert e.value.code == "TYPE_ERROR"


def test_null_poisoning():
    assert ev("a + 1", {"a": None}) is None
    assert ev("a < 1", {"a": None}) is None
    assert ev('a || "x"', {"a": None}) is None
    assert ev("-a", {"a": None}) is None
    assert ev("lower(a)", {"a": None}) is None


def test_three_valued_logic():
    assert ev("a and true", {"a": None}) is None
    assert ev("a and false", {"a": None}) is False
    assert ev("a or true", {"a": None}) is True
    assert ev("a or false", {"a": None}) is None
    assert ev("not a", {"a": None}) is None


def test_comparisons():
    assert ev('"abc" < "abd"') is True
    assert ev("1 == 1.0") is True
    assert ev("2 >= 3") is False
    with pytest.raises(EngineError) as e:
        ev('1 == "x"')
    assert e.value.code == "TYPE_ERROR"


def test_type_errors():
    with pytest.raises(EngineError) as e:
        ev('1 + "x"')
    assert e.value.code == "TYPE_ERROR"
    with pytest.raises(EngineError):
        ev("1 and 2")
    with pytest.raises(EngineError):
        ev('upper(5)')


def test_parse_errors():
    for bad in ("1 +", "(1", 'nosuchfn(1)', "1 $ 2", '"unterminated', "not not 1"):
        with pytest.raises(EngineError) as e:
            expr.parse(bad)
        assert e.value.code == "PARSE_ERROR"


def test_unknown_field():
    with pytest.raises(EngineError) as e:
        ev("missing + 1", {"a": 1})
    assert e.value.code == "TYPE_ERROR"


def test_cast():
    assert ev('cast("12", "INTEGER")') == 12
    assert ev('cast(7, "DECIMAL")') == 7.0
    assert ev('cast(7.9, "INTEGER")') == 7
    assert ev('cast(7.5, "TEXT")') == "7.5"
    assert ev('cast(true, "TEXT")') == "true"
    assert ev('cast("x", "INTEGER")') is None  # unconvertible casts as null
    assert ev('cast(null, "INTEGER")') is None


def test_extract_re():
    assert ev('extract_re(t, "score:(\\\\d+)")', {"t": "score:42 ok"}) == "42"
    assert ev('extract_re(t, "score:(\\\\d+)")', {"t": "none"}) is None
    assert ev('extract_re(t, "(a)(b)", 2)', {"t": "ab"}) == "b"


def test_field_names():
    assert expr.field_names('a + coalesce(b, c) > 2 and lower(d) == "x"') == {"a", "b", "c", "d"}
    assert expr.field_names("1 + 2") == set()


def test_rename_fields_round_trip():
    src = 'units * price + coalesce(bonus, 0)'
    out = expr.rename_fields(src, {"units": "qty"})
    assert expr.field_names(out) == {"qty", "price", "bonus"}
    rec = {"qty": 3, "price": 2.0, "bonus": None}
    assert ev(out, rec) == ev(src, {"units": 3, "price": 2.0, "bonus": None})
    # untouched expressions come back verbatim
    assert expr.rename_fields(src, {"zzz": "q"}) == src


@given(
    st.one_of(
        st.integers(min_value=-100, max_value=100),
        st.booleans(),
        st.text(alphabet='abc XYZ"\\', max_size=6),
        st.none(),
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).map(lambda f: round(f, 3)),
    )
)
def test_literal_round_trip(value):
    assert ev(expr.literal(value)) == value


@given(st.text(max_size=30))
def test_parser_never_crashes_unexpectedly(text):
    try:
        expr.parse(text)
    except EngineError as exc:
        assert exc.code == "PARSE_ERROR"
