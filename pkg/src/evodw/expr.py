"""Tiny expression language used by FILTER and DERIVE transform steps.

Grammar (binding tightest last):

    expr     := or_expr
    or_expr  := and_expr ('or' and_expr)*
    and_expr := not_expr ('and' not_expr)*
    not_expr := ['not'] cmp
    cmp      := add (('=='|'!='|'<'|'<='|'>'|'>=') add)?
    add      := mul (('+'|'-'|'||') mul)*
    mul      := unary (('*'|'/'|'%') unary)*
    unary    := ['-'] atom
    atom     := number | "text" | 'true' | 'false' | 'null'
              | field | fn '(' args ')' | '(' expr ')'

Null semantics: arithmetic, comparison and '||' return null when any operand
is null; 'and'/'or'/'not' use three-valued logic; coalesce picks the first
non-null argument. Division (or modulo) by zero yields null, not an error.
"""

from __future__ import annotations

import re
from functools import lru_cache

from .errors import EngineError

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<text>"(?:[^"\\]|\\.)*")
  | (?P<op>==|!=|<=|>=|\|\||[-+*/%<>(),])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"or", "and", "not", "true", "false", "null"}

FUNCTIONS = ("lower", "upper", "substr", "coalesce", "cast", "extract_re")


def _parse_error(msg: str) -> EngineError:
    return EngineError("PARSE_ERROR", msg)


def _type_error(msg: str) -> EngineError:
    return EngineError("TYPE_ERROR", msg)


def tokenize(source: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise _parse_error(f"unexpected character {source[pos]!r} at {pos}")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        tokens.append((m.lastgroup, m.group()))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> tuple[str, str]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        kind, value = self.peek()
        if kind in ("op", "name") and value == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            raise _parse_error(f"expected {text!r}, found {self.peek()[1]!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise _parse_error(f"trailing input at {self.peek()[1]!r}")
        return node

    def expr(self):
        return self.or_expr()

    def or_expr(self):
        parts = [self.and_expr()]
        while self.accept("or"):
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else ("or", parts)

    def and_expr(self):
        parts = [self.not_expr()]
        while self.accept("and"):
            parts.append(self.not_expr())
        return parts[0] if len(parts) == 1 else ("and", parts)

    def not_expr(self):
        if self.accept("not"):
            return ("not", self.cmp())
        return self.cmp()

    def cmp(self):
        left = self.add()
        kind, value = self.peek()
        if kind == "op" and value in ("==", "!=", "<", "<=", ">", ">="):
            self.next()
            return ("cmp", value, left, self.add())
        return left

    def add(self):
        node = self.mul()
        while True:
            kind, value = self.peek()
            if kind == "op" and value in ("+", "-", "||"):
                self.next()
                node = ("bin", value, node, self.mul())
            else:
                return node

    def mul(self):
        node = self.unary()
        while True:
            kind, value = self.peek()
            if kind == "op" and value in ("*", "/", "%"):
                self.next()
                node = ("bin", value, node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept("-"):
            return ("neg", self.atom())
        return self.atom()

    def atom(self):
        kind, value = self.next()
        if kind == "number":
            return ("lit", float(value) if "." in value else int(value))
        if kind == "text":
            return ("lit", value[1:-1].replace('\\"', '"').replace("\\\\", "\\"))
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if value == "true":
                return ("lit", True)
            if value == "false":
                return ("lit", False)
            if value == "null":
                return ("lit", None)
            if value in _KEYWORDS:
                raise _parse_error(f"unexpected keyword {value!r}")
            if self.peek() == ("op", "("):
                if value not in FUNCTIONS:
                    raise _parse_error(f"unknown function {value!r}")
                self.next()
                args = []
                if self.peek() != ("op", ")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                self.expect(")")
                return ("call", value, args)
            return ("field", value)
        raise _parse_error(f"unexpected token {value!r}")


@lru_cache(maxsize=4096)
def parse(source: str):
    """Parse to an AST; cached because FILTER re-evaluates per record."""
    return _Parser(tokenize(source)).parse()


def field_names(source: str) -> set[str]:
    """All field names referenced by an expression."""
    names: set[str] = set()

    def walk(node):
        tag = node[0]
        if tag == "field":
            names.add(node[1])
        elif tag in ("or", "and"):
            for part in node[1]:
                walk(part)
        elif tag in ("not", "neg"):
            walk(node[1])
        elif tag == "cmp":
            walk(node[2])
            walk(node[3])
        elif tag == "bin":
            walk(node[2])
            walk(node[3])
        elif tag == "call":
            for arg in node[2]:
                walk(arg)

    walk(parse(source))
    return names


def unparse(node) -> str:
    """Source text for an AST; the result re-parses to the same tree."""
    tag = node[0]
    if tag == "lit":
        return literal(node[1])
    if tag == "field":
        return node[1]
    if tag == "or":
        return "(" + " or ".join(unparse(p) for p in node[1]) + ")"
    if tag == "and":
        return "(" + " and ".join(unparse(p) for p in node[1]) + ")"
    if tag == "not":
        return "(not " + unparse(node[1]) + ")"
    if tag in ("cmp", "bin"):
        return f"({unparse(node[2])} {node[1]} {unparse(node[3])})"
    if tag == "neg":
        return "(-" + unparse(node[1]) + ")"
    if tag == "call":
        return f"{node[1]}(" + ", ".join(unparse(a) for a in node[2]) + ")"
    raise AssertionError(f"unhandled node {tag}")


def literal(value) -> str:
    """Expression-language literal for a Python value."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, int):
        return str(value)
    text = repr(float(value))
    if "e" in text or "E" in text or "inf" in text or "nan" in text:
        raise EngineError("INVALID_PARAMETER", f"{value!r} has no literal form")
    return text


def rename_fields(source: str, renames: dict[str, str]) -> str:
    """Rewrite field references; returns the source unchanged when nothing
    matches (so mapping texts stay stable)."""
    if not field_names(source) & renames.keys():
        return source

    def walk(node):
        tag = node[0]
        if tag == "field":
            return ("field", renames.get(node[1], node[1]))
        if tag in ("or", "and"):
            return (tag, [walk(p) for p in node[1]])
        if tag in ("not", "neg"):
            return (tag, walk(node[1]))
        if tag in ("cmp", "bin"):
            return (tag, node[1], walk(node[2]), walk(node[3]))
        if tag == "call":
            return (tag, node[1], [walk(a) for a in node[2]])
        return node

    return unparse(walk(parse(source)))


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _numeric_pair(op: str, a: object, b: object) -> None:
    if not _is_number(a) or not _is_number(b):
        raise _type_error(f"{op!r} needs numeric operands, got {a!r} and {b!r}")


@lru_cache(maxsize=512)
def _compiled_regex(pattern: str) -> re.Pattern:
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise _parse_error(f"bad regex {pattern!r}: {exc}") from exc


def _call(name: str, args: list):
    if name in ("lower", "upper"):
        if len(args) != 1:
            raise _type_error(f"{name}() takes one argument")
        v = args[0]
        if v is None:
            return None
        if not isinstance(v, str):
            raise _type_error(f"{name}() needs text, got {v!r}")
        return v.lower() if name == "lower" else v.upper()
    if name == "substr":
        if len(args) != 3:
            raise _type_error("substr() takes (text, start, length)")
        t, start, length = args
        if t is None or start is None or length is None:
            return None
        if not isinstance(t, str) or not _is_number(start) or not _is_number(length):
            raise _type_error("substr() needs (text, number, number)")
        lo = max(int(start), 1) - 1
        return t[lo : lo + max(int(length), 0)]
    if name == "coalesce":
        if not args:
            raise _type_error("coalesce() needs at least one argument")
        for v in args:
            if v is not None:
                return v
        return None
    if name == "cast":
        if len(args) != 2 or not isinstance(args[1], str):
            raise _type_error('cast() takes (value, "TYPE")')
        return _cast(args[0], args[1])
    if name == "extract_re":
        if len(args) not in (2, 3):
            raise _type_error("extract_re() takes (text, pattern[, group])")
        t, pattern = args[0], args[1]
        group = int(args[2]) if len(args) == 3 else 1
        if t is None:
            return None
        if not isinstance(t, str) or not isinstance(pattern, str):
            raise _type_error("extract_re() needs text arguments")
        m = _compiled_regex(pattern).search(t)
        if m is None:
            return None
        try:
            return m.group(group)
        except IndexError:
            return None
    raise _parse_error(f"unknown function {name!r}")


def _cast(value: object, type_name: str):
    from .values import coerce_text_value, value_to_text

    if value is None:
        return None
    name = type_name.upper()
    try:
        if name == "TEXT":
            return value_to_text(value)
        if isinstance(value, str):
            return coerce_text_value(value, name)
        if name == "INTEGER" and _is_number(value):
            return int(value)
        if name == "DECIMAL" and _is_number(value):
            return float(value)
        if name == "BOOLEAN" and isinstance(value, bool):
            return value
    except ValueError:
        return None
    return None


def evaluate(source: str, record: dict):
    """Evaluate an expression against one record (field name -> value)."""
    return _eval(parse(source), record)


def _eval(node, record: dict):
    tag = node[0]
    if tag == "lit":
        return node[1]
    if tag == "field":
        name = node[1]
        if name not in record:
            raise _type_error(f"unknown field {name!r}")
        return record[name]
    if tag == "or":
        saw_null = False
        for part in node[1]:
            v = _eval(part, record)
            if v is None:
                saw_null = True
            elif not isinstance(v, bool):
                raise _type_error(f"'or' needs boolean operands, got {v!r}")
            elif v:
                return True
        return None if saw_null else False
    if tag == "and":
        saw_null = False
        for part in node[1]:
            v = _eval(part, record)
            if v is None:
                saw_null = True
            elif not isinstance(v, bool):
                raise _type_error(f"'and' needs boolean operands, got {v!r}")
            elif not v:
                return False
        return None if saw_null else True
    if tag == "not":
        v = _eval(node[1], record)
        if v is None:
            return None
        if not isinstance(v, bool):
            raise _type_error(f"'not' needs a boolean operand, got {v!r}")
        return not v
    if tag == "neg":
        v = _eval(node[1], record)
        if v is None:
            return None
        if not _is_number(v):
            raise _type_error(f"unary '-' needs a number, got {v!r}")
        return -v
    if tag == "cmp":
        op = node[1]
        a = _eval(node[2], record)
        b = _eval(node[3], record)
        if a is None or b is None:
            return None
        return _compare(op, a, b)
    if tag == "bin":
        op = node[1]
        a = _eval(node[2], record)
        b = _eval(node[3], record)
        if a is None or b is None:
            return None
        return _binary(op, a, b)
    if tag == "call":
        return _call(node[1], [_eval(arg, record) for arg in node[2]])
    raise AssertionError(f"unhandled node {tag}")


def _compare(op: str, a, b):
    if isinstance(a, bool) or isinstance(b, bool):
        if op in ("==", "!="):
            if isinstance(a, bool) and isinstance(b, bool):
                return (a == b) if op == "==" else (a != b)
        raise _type_error(f"cannot compare {a!r} {op} {b!r}")
    if _is_number(a) and _is_number(b):
        pass
    elif isinstance(a, str) and isinstance(b, str):
        pass
    else:
        raise _type_error(f"cannot compare {a!r} {op} {b!r}")
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _binary(op: str, a, b):
    if op == "||":
        if isinstance(a, str) and isinstance(b, str):
            return a + b
        raise _type_error(f"'||' needs text operands, got {a!r} and {b!r}")
    _numeric_pair(op, a, b)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            return None
        return a / b
    if b == 0:
        return None
    return a % b
