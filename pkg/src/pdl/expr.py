"""Template expressions: the Jinja-like ``${...}`` sublanguage.

A string scalar in a PDL document is compiled into one of three shapes:

* :class:`PureExpr` -- the whole string is a single ``${...}``; evaluates to
  any value with its type intact.
* :class:`Interpolation` -- literal text mixed with ``${...}`` segments;
  always evaluates to a string.
* :class:`Literal` -- a non-string scalar, or a string with no expressions.

Expressions are parsed once and compiled to Python closures taking a
``lookup(name)`` function.  Evaluation never mutates anything.
"""

from __future__ import annotations

import functools
import json
import math
import re
from typing import Any, Callable

from .ast import Closure
from .errors import ExprTypeError, TemplateSyntaxError, UnserializableValue

Lookup = Callable[[str], Any]


# ---------------------------------------------------------------------------
# Value helpers
# ---------------------------------------------------------------------------


def type_name(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, list):
        return "array"
    if isinstance(v, dict):
        return "object"
    if isinstance(v, Closure):
        return "closure"
    return type(v).__name__


def _json_default(o):
    raise UnserializableValue(type_name(o))


_EXACT_INT = 2**53


def _integral(v: float) -> bool:
    return v.is_integer() and abs(v) <= _EXACT_INT


def _normalize_numbers(v):
    """Integral floats render as integers, matching the single number model."""
    if isinstance(v, float) and _integral(v):
        return int(v)
    if isinstance(v, list):
        return [_normalize_numbers(x) for x in v]
    if isinstance(v, dict):
        return {k: _normalize_numbers(x) for k, x in v.items()}
    return v


def to_json(v) -> str:
    """Compact JSON with ``", "``/``": "`` separators and insertion-ordered keys."""
    try:
        return json.dumps(_normalize_numbers(v), ensure_ascii=False, default=_json_default)
    except ValueError as exc:  # circular reference
        raise UnserializableValue(str(exc)) from None


def stringify(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isfinite(v):
            return str(int(v)) if _integral(v) else repr(v)
        return to_json(v)
    if isinstance(v, (list, dict)):
        return to_json(v)
    raise UnserializableValue(type_name(v))


def truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    if v is None:
        return False
    if isinstance(v, (int, float)):
        return v != 0
    if isinstance(v, (str, list, dict)):
        return len(v) > 0
    return True


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)
  | (?P<string>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>//|==|!=|<=|>=|[-+*/%<>~()\[\]{},:.|])
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'", "0": "\0"}


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), "\\" + m.group(1)), body)


def tokenize(src: str) -> list[tuple[str, Any]]:
    pos = 0
    out: list[tuple[str, Any]] = []
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise TemplateSyntaxError(f"unexpected character {src[pos]!r} in expression {src!r}")
        kind = m.lastgroup
        text = m.group()
        pos = m.end()
        if kind == "ws":
            continue
        if kind == "number":
            out.append(("num", float(text) if any(c in text for c in ".eE") else int(text)))
        elif kind == "string":
            out.append(("str", _unescape(text[1:-1])))
        elif kind == "name":
            out.append(("name", text))
        else:
            out.append(("op", text))
    out.append(("eof", None))
    return out


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


def _f_length(v):
    if isinstance(v, (str, list, dict)):
        return len(v)
    raise ExprTypeError(f"filter 'length' expects string, array or object, got {type_name(v)}")


def _f_join(v, sep=""):
    if not isinstance(v, list):
        raise ExprTypeError(f"filter 'join' expects array, got {type_name(v)}")
    return stringify(sep).join(stringify(x) for x in v)


def _str_filter(name, fn):
    def apply(v):
        if not isinstance(v, str):
            raise ExprTypeError(f"filter '{name}' expects string, got {type_name(v)}")
        return fn(v)

    return apply


FILTERS: dict[str, Callable] = {
    "length": _f_length,
    "join": _f_join,
    "trim": _str_filter("trim", str.strip),
    "lower": _str_filter("lower", str.lower),
    "upper": _str_filter("upper", str.upper),
    "tojson": lambda v: to_json(v),
}


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _mismatch(op, a, b):
    return ExprTypeError(f"unsupported operand types for {op}: {type_name(a)} and {type_name(b)}")


def _add(a, b):
    if _is_number(a) and _is_number(b):
        return a + b
    if isinstance(a, str) and isinstance(b, str):
        return a + b
    if isinstance(a, list) and isinstance(b, list):
        return a + b
    raise _mismatch("+", a, b)


def _numeric(op, fn):
    def apply(a, b):
        if _is_number(a) and _is_number(b):
            try:
                return fn(a, b)
            except ZeroDivisionError:
                raise ExprTypeError(f"division by zero in {op}") from None
        raise _mismatch(op, a, b)

    return apply


def _mul(a, b):
    if _is_number(a) and _is_number(b):
        return a * b
    if isinstance(a, str) and isinstance(b, int) and not isinstance(b, bool):
        return a * b
    raise _mismatch("*", a, b)


def _ordered(op, fn):
    def apply(a, b):
        if (_is_number(a) and _is_number(b)) or (isinstance(a, str) and isinstance(b, str)):
            return fn(a, b)
        raise _mismatch(op, a, b)

    return apply


def _contains(a, b):
    if isinstance(b, str):
        if not isinstance(a, str):
            raise _mismatch("in", a, b)
        return a in b
    if isinstance(b, (list, dict)):
        return a in b
    raise _mismatch("in", a, b)


BINARY = {
    "+": _add,
    "-": _numeric("-", lambda a, b: a - b),
    "*": _mul,
    "/": _numeric("/", lambda a, b: a / b),
    "//": _numeric("//", lambda a, b: a // b),
    "%": _numeric("%", lambda a, b: a % b),
    "~": lambda a, b: stringify(a) + stringify(b),
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": _ordered("<", lambda a, b: a < b),
    "<=": _ordered("<=", lambda a, b: a <= b),
    ">": _ordered(">", lambda a, b: a > b),
    ">=": _ordered(">=", lambda a, b: a >= b),
    "in": _contains,
    "not in": lambda a, b: not _contains(a, b),
}

_COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")


def _get_item(obj, key):
    if isinstance(obj, dict):
        if not isinstance(key, str):
            raise ExprTypeError(f"object key must be a string, got {type_name(key)}")
        if key not in obj:
            raise ExprTypeError(f"object has no field {key!r}")
        return obj[key]
    if isinstance(obj, (list, str)):
        if not isinstance(key, int) or isinstance(key, bool):
            raise ExprTypeError(f"{type_name(obj)} index must be an integer, got {type_name(key)}")
        try:
            return obj[key]
        except IndexError:
            raise ExprTypeError(f"index {key} out of range") from None
    raise ExprTypeError(f"cannot index into {type_name(obj)}")


def _get_attr(obj, name):
    if isinstance(obj, dict):
        if name not in obj:
            raise ExprTypeError(f"object has no field {name!r}")
        return obj[name]
    raise ExprTypeError(f"cannot access field {name!r} of {type_name(obj)}")


def _slice(obj, lo, hi):
    if not isinstance(obj, (list, str)):
        raise ExprTypeError(f"cannot slice {type_name(obj)}")
    for b in (lo, hi):
        if b is not None and (not isinstance(b, int) or isinstance(b, bool)):
            raise ExprTypeError("slice bounds must be integers")
    return obj[lo:hi]


# ---------------------------------------------------------------------------
# Parser: tokens -> compiled closures
# ---------------------------------------------------------------------------

_CONSTANTS = {"true": True, "True": True, "false": False, "False": False, "none": None, "None": None, "null": None}


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    def peek(self, offset=0):
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def at(self, kind, value=None) -> bool:
        k, v = self.peek()
        return k == kind and (value is None or v == value)

    def accept(self, kind, value=None) -> bool:
        if self.at(kind, value):
            self.i += 1
            return True
        return False

    def expect(self, kind, value=None):
        if not self.at(kind, value):
            k, got = self.peek()
            got = "end of input" if k == "eof" else repr(got)
            raise TemplateSyntaxError(f"expected {value or kind} but found {got} in expression {self.src!r}")
        return self.next()

    def parse(self):
        if self.at("eof"):
            raise TemplateSyntaxError("empty expression")
        fn = self.conditional()
        if not self.at("eof"):
            raise TemplateSyntaxError(f"unexpected {self.peek()[1]!r} in expression {self.src!r}")
        return fn

    def conditional(self):
        body = self.or_expr()
        if self.accept("name", "if"):
            cond = self.or_expr()
            other = self.conditional() if self.accept("name", "else") else (lambda env: None)
            return lambda env: body(env) if truthy(cond(env)) else other(env)
        return body

    def or_expr(self):
        left = self.and_expr()
        while self.accept("name", "or"):
            right = self.and_expr()
            left = (lambda l, r: lambda env: l(env) if truthy(l(env)) else r(env))(left, right)
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.accept("name", "and"):
            right = self.not_expr()
            left = (lambda l, r: lambda env: r(env) if truthy(l(env)) else l(env))(left, right)
        return left

    def not_expr(self):
        if self.accept("name", "not"):
            inner = self.not_expr()
            return lambda env: not truthy(inner(env))
        return self.compare()

    def compare(self):
        first = self.additive()
        rest = []
        while True:
            k, v = self.peek()
            if k == "op" and v in _COMPARE_OPS:
                self.next()
                rest.append((BINARY[v], self.additive()))
            elif k == "name" and v == "in":
                self.next()
                rest.append((BINARY["in"], self.additive()))
            elif k == "name" and v == "not" and self.peek(1) == ("name", "in"):
                self.i += 2
                rest.append((BINARY["not in"], self.additive()))
            else:
                break
        if not rest:
            return first

        def chain(env):
            left = first(env)
            for op, fn in rest:
                right = fn(env)
                if not op(left, right):
                    return False
                left = right
            return True

        return chain

    def additive(self):
        left = self.concat()
        while self.at("op", "+") or self.at("op", "-"):
            op = BINARY[self.next()[1]]
            right = self.concat()
            left = (lambda o, l, r: lambda env: o(l(env), r(env)))(op, left, right)
        return left

    def concat(self):
        left = self.multiplicative()
        while self.accept("op", "~"):
            right = self.multiplicative()
            left = (lambda l, r: lambda env: stringify(l(env)) + stringify(r(env)))(left, right)
        return left

    def multiplicative(self):
        left = self.unary()
        while any(self.at("op", o) for o in ("*", "/", "//", "%")):
            op = BINARY[self.next()[1]]
            right = self.unary()
            left = (lambda o, l, r: lambda env: o(l(env), r(env)))(op, left, right)
        return left

    def unary(self):
        if self.accept("op", "-"):
            inner = self.unary()

            def neg(env):
                v = inner(env)
                if not _is_number(v):
                    raise ExprTypeError(f"bad operand type for unary -: {type_name(v)}")
                return -v

            return neg
        if self.accept("op", "+"):
            return self.unary()
        return self.postfix()

    def postfix(self):
        fn = self.primary()
        while True:
            if self.accept("op", "."):
                name = self.expect("name")[1]
                fn = (lambda f, n: lambda env: _get_attr(f(env), n))(fn, name)
            elif self.accept("op", "["):
                fn = self._subscript(fn)
            elif self.accept("op", "|"):
                fn = self._filter(fn)
            elif self.at("op", "("):
                raise TemplateSyntaxError(f"function calls are not supported in expression {self.src!r}")
            else:
                return fn

    def _subscript(self, target):
        lo = None if self.at("op", ":") else self.conditional()
        if self.accept("op", ":"):
            hi = None if self.at("op", "]") else self.conditional()
            self.expect("op", "]")
            return lambda env: _slice(
                target(env), lo(env) if lo else None, hi(env) if hi else None
            )
        self.expect("op", "]")
        return lambda env: _get_item(target(env), lo(env))

    def _filter(self, target):
        name = self.expect("name")[1]
        if name not in FILTERS:
            raise TemplateSyntaxError(f"unknown filter '{name}'")
        impl = FILTERS[name]
        args = []
        if self.accept("op", "("):
            if not self.at("op", ")"):
                args.append(self.conditional())
                while self.accept("op", ","):
                    args.append(self.conditional())
            self.expect("op", ")")

        def apply(env):
            try:
                return impl(target(env), *[a(env) for a in args])
            except TypeError as exc:
                raise ExprTypeError(f"bad arguments to filter '{name}': {exc}") from None

        return apply

    def primary(self):
        kind, val = self.next()
        if kind in ("num", "str"):
            return lambda env: val
        if kind == "name":
            if val in _CONSTANTS:
                const = _CONSTANTS[val]
                return lambda env: const
            return lambda env: env(val)
        if kind == "op" and val == "(":
            inner = self.conditional()
            self.expect("op", ")")
            return inner
        if kind == "op" and val == "[":
            items = []
            if not self.at("op", "]"):
                items.append(self.conditional())
                while self.accept("op", ","):
                    if self.at("op", "]"):
                        break
                    items.append(self.conditional())
            self.expect("op", "]")
            return lambda env: [f(env) for f in items]
        if kind == "op" and val == "{":
            pairs = []
            if not self.at("op", "}"):
                while True:
                    k = self.conditional()
                    self.expect("op", ":")
                    pairs.append((k, self.conditional()))
                    if not self.accept("op", ",") or self.at("op", "}"):
                        break
            self.expect("op", "}")

            def build(env):
                out = {}
                for kf, vf in pairs:
                    key = kf(env)
                    if not isinstance(key, str):
                        raise ExprTypeError(f"object key must be a string, got {type_name(key)}")
                    out[key] = vf(env)
                return out

            return build
        what = "end of input" if kind == "eof" else repr(val)
        raise TemplateSyntaxError(f"unexpected {what} in expression {self.src!r}")


@functools.lru_cache(maxsize=8192)
def compile_expression(src: str) -> Callable[[Lookup], Any]:
    """Compile a bare expression (no ``${}``) into ``fn(lookup) -> value``."""
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


class TemplateExpr:
    source: Any

    def evaluate(self, lookup: Lookup):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and _same_literal(self.source, other.source)

    def __hash__(self):
        return hash((type(self).__name__, repr(self.source)))

    def __repr__(self):
        return f"{type(self).__name__}({self.source!r})"


def _same_literal(a, b) -> bool:
    return type(a) is type(b) and a == b


class Literal(TemplateExpr):
    def __init__(self, value, source=None):
        self.value = value
        self.source = value if source is None else source

    def evaluate(self, lookup):
        return self.value


class PureExpr(TemplateExpr):
    def __init__(self, source: str, code: str):
        self.source = source
        self.code = code
        self.fn = compile_expression(code)

    def evaluate(self, lookup):
        return self.fn(lookup)


class Interpolation(TemplateExpr):
    def __init__(self, source: str, parts: list):
        self.source = source
        self.parts = [p if isinstance(p, str) else compile_expression(p[0]) for p in parts]

    def evaluate(self, lookup):
        return "".join(p if isinstance(p, str) else stringify(p(lookup)) for p in self.parts)


def _scan_expression(s: str, start: int) -> int:
    """Index of the ``}`` closing the ``${`` whose body starts at ``start``."""
    depth = 0
    i = start
    while i < len(s):
        c = s[i]
        if c in "\"'":
            j = i + 1
            while j < len(s) and s[j] != c:
                j += 2 if s[j] == "\\" else 1
            if j >= len(s):
                break
            i = j + 1
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            if depth == 0:
                return i
            depth -= 1
        i += 1
    raise TemplateSyntaxError(f"unterminated '${{' in {s!r}")


def split_template(s: str) -> list:
    """Split into literal strings and ``(code,)`` expression segments."""
    if "{%" in s:
        raise TemplateSyntaxError(f"statement tags '{{% ... %}}' are not supported: {s!r}")
    parts: list = []
    buf = []
    i = 0
    while i < len(s):
        if s.startswith("\\${", i):
            buf.append("${")
            i += 3
        elif s.startswith("${", i):
            end = _scan_expression(s, i + 2)
            if buf:
                parts.append("".join(buf))
                buf = []
            parts.append((s[i + 2 : end],))
            i = end + 1
        else:
            buf.append(s[i])
            i += 1
    if buf:
        parts.append("".join(buf))
    return parts


@functools.lru_cache(maxsize=8192)
def _compile_string(s: str) -> TemplateExpr:
    parts = split_template(s)
    if len(parts) == 1 and isinstance(parts[0], tuple):
        return PureExpr(s, parts[0][0])
    if all(isinstance(p, str) for p in parts):
        return Literal("".join(parts), source=s)
    return Interpolation(s, parts)


def compile_template(value) -> TemplateExpr:
    if isinstance(value, TemplateExpr):
        return value
    if isinstance(value, str):
        return _compile_string(value)
    if value is None or isinstance(value, (bool, int, float)):
        return Literal(value)
    raise TemplateSyntaxError(f"not an expression: {type_name(value)}")


def escape_literal(s: str) -> str:
    """Source text for a string that must evaluate to ``s`` verbatim."""
    return s.replace("${", "\\${")


def eval_expr(lookup: Lookup, e) -> Any:
    return compile_template(e).evaluate(lookup)


def eval_condition(lookup: Lookup, e) -> bool:
    return truthy(eval_expr(lookup, e))


def expand_data(lookup: Lookup, tree):
    """Template-expand every string scalar inside a JSON tree, keeping types."""
    if isinstance(tree, str):
        return _compile_string(tree).evaluate(lookup)
    if isinstance(tree, list):
        return [expand_data(lookup, x) for x in tree]
    if isinstance(tree, dict):
        return {k: expand_data(lookup, v) for k, v in tree.items()}
    return tree


def check_data_templates(tree) -> list[tuple[tuple, str]]:
    """Syntax-check every string inside a JSON tree; returns (subpath, message)."""
    errors = []

    def walk(node, path):
        if isinstance(node, str):
            try:
                _compile_string(node)
            except TemplateSyntaxError as exc:
                errors.append((path, exc.message))
        elif isinstance(node, list):
            for i, x in enumerate(node):
                walk(x, path + (i,))
        elif isinstance(node, dict):
            for k, x in node.items():
                walk(x, path + (k,))

    walk(tree, ())
    return errors
