"""Runtime types (``spec:``) and result parsers (``parser:``)."""

from __future__ import annotations

import json
import re

import yaml

from .ast import ArrayType, EnumType, ObjectType, OptionalType, ParserKind, PrimType, TypeSpec
from .errors import ParserFailure, TypeMismatch

PRIMITIVES = ("str", "bool", "int", "float", "null", "obj")

_LONGHAND_TYPES = {
    "string": "str",
    "boolean": "bool",
    "integer": "int",
    "number": "float",
    "null": "null",
}


class TypeSyntaxError(ValueError):
    def __init__(self, message: str, path: tuple = ()):
        super().__init__(message)
        self.message = message
        self.path = path


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def suggest(word: str, candidates, max_distance: int = 2) -> str | None:
    best = None
    for c in candidates:
        d = edit_distance(word, c)
        if d <= max_distance and (best is None or d < best[0]):
            best = (d, c)
    return best[1] if best else None


# ---------------------------------------------------------------------------
# Shorthand expansion
# ---------------------------------------------------------------------------


def _split_top(s: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for c in s:
        if c in "[{":
            depth += 1
        elif c in "]}":
            depth -= 1
        if c == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(c)
    parts.append("".join(cur))
    return parts


def _parse_type_string(s: str, path: tuple) -> TypeSpec:
    s = s.strip()
    if s in PRIMITIVES:
        return PrimType(s)
    if s.startswith("[") and s.endswith("]"):
        return ArrayType(_parse_type_string(s[1:-1], path))
    if s.startswith("{") and s.endswith("}"):
        inner = s[1:-1].strip()
        fields = []
        if inner:
            for part in _split_top(inner, ","):
                name, colon, rest = part.partition(":")
                if not colon or not name.strip():
                    raise TypeSyntaxError(f"malformed object type field {part.strip()!r}", path)
                fields.append((name.strip(), _parse_type_string(rest, path + (name.strip(),))))
        return ObjectType(tuple(fields)) if fields else PrimType("obj")
    if s.startswith("optional "):
        return OptionalType(_parse_type_string(s[len("optional ") :], path))
    hint = suggest(s, PRIMITIVES)
    msg = f"unknown type {s!r}"
    if hint:
        msg += f"; did you mean {hint!r}?"
    raise TypeSyntaxError(msg, path)


def _is_longhand(d: dict) -> bool:
    t = d.get("type")
    return isinstance(t, str) and t in ("string", "boolean", "integer", "number", "null", "array", "object")


def _expand_longhand(d: dict, path: tuple) -> TypeSpec:
    t = d["type"]
    if t in _LONGHAND_TYPES:
        return PrimType(_LONGHAND_TYPES[t])
    if t == "array":
        if "items" not in d:
            raise TypeSyntaxError("array type needs 'items'", path)
        return ArrayType(expand_type(d["items"], path + ("items",)))
    props = d.get("properties") or {}
    if not isinstance(props, dict):
        raise TypeSyntaxError("'properties' must be an object", path)
    if not props:
        return PrimType("obj")
    required = d.get("required", list(props))
    fields = []
    for name, sub in props.items():
        ft = expand_type(sub, path + ("properties", name))
        if name not in required and not isinstance(ft, OptionalType):
            ft = OptionalType(ft)
        fields.append((name, ft))
    return ObjectType(tuple(fields))


def expand_type(t, path: tuple = ()) -> TypeSpec:
    """Expand shorthand or JSON-Schema-subset longhand into a TypeSpec tree.

    Idempotent: a TypeSpec is returned unchanged.
    """
    if isinstance(t, TypeSpec):
        return t
    if isinstance(t, str):
        return _parse_type_string(t, path)
    if isinstance(t, list):
        if len(t) != 1:
            raise TypeSyntaxError("array shorthand takes exactly one element type, e.g. [str]", path)
        return ArrayType(expand_type(t[0], path + (0,)))
    if isinstance(t, dict):
        if set(t) == {"enum"}:
            if not isinstance(t["enum"], list) or not t["enum"]:
                raise TypeSyntaxError("enum needs a nonempty list of values", path)
            return EnumType(tuple(t["enum"]))
        if set(t) == {"optional"}:
            return OptionalType(expand_type(t["optional"], path + ("optional",)))
        if _is_longhand(t):
            return _expand_longhand(t, path)
        if not t:
            return PrimType("obj")
        return ObjectType(tuple((str(k), expand_type(v, path + (k,))) for k, v in t.items()))
    raise TypeSyntaxError(f"not a type: {t!r}", path)


def type_to_data(t: TypeSpec):
    """Shorthand form of a TypeSpec; ``expand_type(type_to_data(t)) == t``."""
    if isinstance(t, PrimType):
        return t.name
    if isinstance(t, ArrayType):
        return [type_to_data(t.item)]
    if isinstance(t, OptionalType):
        return {"optional": type_to_data(t.inner)}
    if isinstance(t, EnumType):
        return {"enum": list(t.values)}
    if isinstance(t, ObjectType):
        if not t.fields:
            return "obj"
        return {k: type_to_data(v) for k, v in t.fields}
    raise TypeError(t)


def to_json_schema(t: TypeSpec) -> dict:
    if isinstance(t, PrimType):
        if t.name == "obj":
            return {"type": "object"}
        back = {v: k for k, v in _LONGHAND_TYPES.items()}
        return {"type": back[t.name]}
    if isinstance(t, ArrayType):
        return {"type": "array", "items": to_json_schema(t.item)}
    if isinstance(t, OptionalType):
        return {"anyOf": [to_json_schema(t.inner), {"type": "null"}]}
    if isinstance(t, EnumType):
        return {"enum": list(t.values)}
    if isinstance(t, ObjectType):
        return {
            "type": "object",
            "properties": {k: to_json_schema(v) for k, v in t.fields},
            "required": [k for k, v in t.fields if not isinstance(v, OptionalType)],
        }
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Checking
# ---------------------------------------------------------------------------


def json_equal(a, b) -> bool:
    """Equality in the JSON data model: booleans are never numbers."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return a == b
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    return type(a) is type(b) and a == b


def _excerpt(v) -> str:
    try:
        text = json.dumps(v, ensure_ascii=False)
    except (TypeError, ValueError):
        text = repr(v)
    return text if len(text) <= 60 else text[:57] + "..."


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def check_spec(v, t: TypeSpec, path: tuple = ()) -> TypeMismatch | None:
    """First mismatch (depth-first, field order) or None."""
    if isinstance(t, OptionalType):
        return None if v is None else check_spec(v, t.inner, path)
    if isinstance(t, PrimType):
        ok = {
            "str": lambda: isinstance(v, str),
            "bool": lambda: isinstance(v, bool),
            "int": lambda: _is_num(v) and float(v).is_integer(),
            "float": lambda: _is_num(v),
            "null": lambda: v is None,
            "obj": lambda: isinstance(v, dict),
        }[t.name]()
        return None if ok else TypeMismatch(path, str(t), _excerpt(v))
    if isinstance(t, EnumType):
        if any(json_equal(v, x) for x in t.values):
            return None
        return TypeMismatch(path, str(t), _excerpt(v))
    if isinstance(t, ArrayType):
        if not isinstance(v, list):
            return TypeMismatch(path, str(t), _excerpt(v))
        for i, x in enumerate(v):
            bad = check_spec(x, t.item, path + (i,))
            if bad:
                return bad
        return None
    if isinstance(t, ObjectType):
        if not isinstance(v, dict):
            return TypeMismatch(path, str(t), _excerpt(v))
        for name, ft in t.fields:
            if name not in v:
                if isinstance(ft, OptionalType):
                    continue
                return TypeMismatch(path + (name,), str(ft), "<missing>",
                                    f"missing required field {name!r}")
            bad = check_spec(v[name], ft, path + (name,))
            if bad:
                return bad
        return None
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Result parsers
# ---------------------------------------------------------------------------

PARSER_NAMES = ("json", "yaml", "jsonl", "regex")


def parser_from_data(d) -> ParserKind:
    if isinstance(d, str) and d in ("json", "yaml", "jsonl"):
        return ParserKind(d)
    if isinstance(d, dict) and "regex" in d:
        return ParserKind("regex", d["regex"], d.get("mode", "fullmatch"))
    raise ValueError(f"unknown parser {d!r}")


def parser_to_data(p: ParserKind):
    if p.kind == "regex":
        return {"regex": p.pattern} if p.mode == "fullmatch" else {"regex": p.pattern, "mode": p.mode}
    return p.kind


def apply_parser(kind: ParserKind, raw: str):
    if kind.kind == "json":
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParserFailure(f"json parser failed at offset {exc.pos}: {exc.msg}") from None
    if kind.kind == "yaml":
        try:
            return yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at offset {mark.index}" if mark is not None else ""
            raise ParserFailure(f"yaml parser failed{where}: {getattr(exc, 'problem', exc)}") from None
    if kind.kind == "jsonl":
        out = []
        offset = 0
        for line in raw.splitlines(keepends=True):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParserFailure(
                        f"jsonl parser failed at offset {offset + exc.pos}: {exc.msg}"
                    ) from None
            offset += len(line)
        return out
    if kind.kind == "regex":
        try:
            rx = re.compile(kind.pattern)
        except re.error as exc:
            raise ParserFailure(f"invalid regex {kind.pattern!r}: {exc}") from None
        m = rx.fullmatch(raw)
        if m is None:
            raise ParserFailure(f"regex {kind.pattern!r} does not match the block result")
        if rx.groupindex:
            return m.groupdict()
        return list(m.groups())
    raise ParserFailure(f"unknown parser {kind.kind!r}")
