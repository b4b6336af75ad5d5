"""YAML text -> validated, desugared PDL program (and back)."""

from __future__ import annotations

import copy
import re
from dataclasses import replace
from pathlib import Path

import jsonschema
import yaml

from .ast import (
    ArrayB,
    Block,
    BlockList,
    Call,
    Code,
    Contribute,
    Data,
    ExprLeaf,
    For,
    Function,
    Get,
    If,
    Include,
    Join,
    LastOf,
    Model,
    ObjectB,
    Program,
    Read,
    Repeat,
    RepeatUntil,
    Text,
)
from .errors import Diagnostic, IncludeError, PDLParseError, TemplateSyntaxError
from .expr import TemplateExpr, check_data_templates, compile_template
from .typecheck import (
    TypeSyntaxError,
    expand_type,
    parser_from_data,
    parser_to_data,
    suggest,
    type_to_data,
)

# ---------------------------------------------------------------------------
# YAML loading
# ---------------------------------------------------------------------------


class PDLLoader(yaml.SafeLoader):
    """SafeLoader restricted to the JSON data model.

    Only ``true``/``false`` are booleans (``yes``/``on`` stay strings) and
    dates are not resolved.
    """


PDLLoader.yaml_implicit_resolvers = {
    ch: [(tag, rx) for tag, rx in resolvers if tag not in ("tag:yaml.org,2002:bool", "tag:yaml.org,2002:timestamp")]
    for ch, resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
PDLLoader.add_implicit_resolver(
    "tag:yaml.org,2002:bool",
    re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"),
    list("tTfF"),
)


def _positions(node, path=(), out=None) -> dict:
    if out is None:
        out = {}
    if node is None:
        return out
    out[path] = (node.start_mark.line + 1, node.start_mark.column + 1)
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            key = knode.value
            _positions(vnode, path + (key,), out)
            out[path + (key,)] = (knode.start_mark.line + 1, knode.start_mark.column + 1)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _positions(item, path + (i,), out)
    return out


def load_yaml(source_text: str):
    """Returns ``(document, positions)``; raises PDLParseError on YAML errors."""
    loader = PDLLoader(source_text)
    try:
        node = loader.get_single_node()
        data = loader.construct_document(node) if node is not None else None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise PDLParseError([Diagnostic("error", (), f"YAML syntax error: {problem}", line, col)]) from None
    finally:
        loader.dispose()
    return data, _positions(node)


# ---------------------------------------------------------------------------
# Meta-schema
# ---------------------------------------------------------------------------

PROGRAM = "<program>"
PROGRAM_MAP = "<program-map>"
OBJECT_BODY = "<object-body>"
TYPE = "<type>"
PARAMS = "<params>"

IDENT = {"type": "string", "pattern": r"^(?!context$)[A-Za-z_][A-Za-z0-9_]*$"}
STRING = {"type": "string"}
EXPRESSION = {"type": ["string", "number", "boolean", "null"]}
CONDITION = {"type": ["string", "boolean"]}
JOIN = {
    "type": "object",
    "properties": {"as": {"enum": ["text", "array", "lastOf"]}, "with": STRING},
    "additionalProperties": False,
}
CONTRIBUTE = {"type": "array", "items": {"enum": ["result", "context"]}, "uniqueItems": True}
PARSER = {
    "anyOf": [
        {"enum": ["json", "yaml", "jsonl"]},
        {
            "type": "object",
            "properties": {"regex": STRING, "mode": {"enum": ["fullmatch"]}},
            "required": ["regex"],
            "additionalProperties": False,
        },
    ]
}

COMMON_FIELDS = {
    "description": STRING,
    "def": IDENT,
    "defs": PROGRAM_MAP,
    "role": {"type": "string", "minLength": 1},
    "contribute": CONTRIBUTE,
    "parser": PARSER,
    "spec": TYPE,
}

# kind -> (field schemas, required fields). The first field is the body keyword.
KINDS = {
    "expr": ({"expr": EXPRESSION}, []),
    "model": ({"model": STRING, "input": PROGRAM, "parameters": {"type": "object"}}, []),
    "read": (
        {"read": {"type": ["string", "null"]}, "message": STRING, "multiline": {"type": "boolean"}},
        [],
    ),
    "text": ({"text": PROGRAM}, []),
    "lastOf": ({"lastOf": PROGRAM}, []),
    "array": ({"array": PROGRAM}, []),
    "object": ({"object": OBJECT_BODY}, []),
    "data": ({"data": {}, "raw": {"type": "boolean"}}, []),
    "include": ({"include": STRING}, []),
    "function": ({"function": PARAMS, "return": PROGRAM}, ["return"]),
    "call": ({"call": STRING, "args": {"type": "object"}, "pdl_context": PROGRAM}, []),
    "if": ({"if": CONDITION, "then": PROGRAM, "else": PROGRAM}, ["then"]),
    "for": (
        {
            "for": {
                "type": "object",
                "minProperties": 1,
                "propertyNames": {"pattern": IDENT["pattern"]},
                "additionalProperties": {"type": ["string", "array"]},
            },
            "repeat": PROGRAM,
            "join": JOIN,
        },
        ["repeat"],
    ),
    "repeat_until": ({"repeat": PROGRAM, "until": CONDITION, "join": JOIN}, ["until"]),
    "repeat_n": (
        {"repeat": PROGRAM, "num_iterations": {"type": ["integer", "string"]}, "join": JOIN},
        ["num_iterations"],
    ),
    "code": ({"code": PROGRAM, "lang": STRING}, ["lang"]),
    "get": ({"get": STRING}, []),
}

BODY_KEYWORDS = (
    "model", "read", "text", "lastOf", "array", "object", "data", "include",
    "function", "call", "if", "for", "repeat", "code", "get", "expr",
)
ALL_KEYWORDS = sorted(
    set(COMMON_FIELDS) | {f for fields, _ in KINDS.values() for f in fields}
)


def _slot_schema(s, full: bool):
    if s == PROGRAM:
        return {"$ref": "#/$defs/program"} if full else {}
    if s == PROGRAM_MAP:
        return {"type": "object", "additionalProperties": {"$ref": "#/$defs/program"}} if full else {"type": "object"}
    if s == OBJECT_BODY:
        if full:
            return {
                "anyOf": [
                    {"type": "object", "additionalProperties": {"$ref": "#/$defs/program"}},
                    {"type": "array", "items": {"$ref": "#/$defs/block"}},
                ]
            }
        return {"type": ["object", "array"]}
    if s == TYPE:
        return {}
    if s == PARAMS:
        return {"type": ["object", "null"]}
    return s


def kind_schema(kind: str, full: bool = False) -> dict:
    fields, required = KINDS[kind]
    props = {k: _slot_schema(v, full) for k, v in {**fields, **COMMON_FIELDS}.items()}
    keyword = "repeat" if kind.startswith("repeat") else kind
    schema = {"type": "object", "properties": props, "required": sorted({keyword, *required})}
    if full:
        schema["additionalProperties"] = False
    return schema


def meta_schema() -> dict:
    """The PDL meta-schema as a standalone JSON Schema document.

    It captures document structure; template syntax and type shorthand are
    checked by :func:`validate_meta_schema` on top of it.
    """
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "pdl-schema.json",
        "title": "PDL program",
        "$ref": "#/$defs/program",
        "$defs": {
            "program": {
                "anyOf": [
                    {"$ref": "#/$defs/block"},
                    {"type": "array", "items": {"$ref": "#/$defs/block"}},
                ]
            },
            "block": {
                "anyOf": [EXPRESSION] + [{"$ref": f"#/$defs/{k}_block"} for k in KINDS]
            },
            **{f"{k}_block": kind_schema(k, full=True) for k in KINDS},
        },
    }


_VALIDATORS = {k: jsonschema.Draft202012Validator(kind_schema(k)) for k in KINDS}


def block_kind(node: dict) -> tuple[str | None, str | None]:
    """Classify a block mapping. Returns ``(kind, error)``."""
    present = [k for k in BODY_KEYWORDS if k in node]
    if "for" in present and "repeat" in present:
        present.remove("repeat")
    if "repeat" in present:
        has_until, has_n = "until" in node, "num_iterations" in node
        if has_until and has_n:
            return None, "ambiguous block kind: repeat with both until and num_iterations"
        if not has_until and not has_n:
            return None, "repeat block needs until: or num_iterations: (or a for: header)"
        present[present.index("repeat")] = "repeat_until" if has_until else "repeat_n"
    if not present:
        return None, None
    if len(present) > 1:
        names = ", ".join(p.split("_")[0] for p in present)
        return None, f"ambiguous block kind: {names}"
    return present[0], None


class _Validator:
    def __init__(self):
        self.errors: list[tuple[tuple, str]] = []

    def error(self, path, message):
        self.errors.append((tuple(path), message))

    def program(self, node, path):
        if isinstance(node, list):
            for i, item in enumerate(node):
                self.block(item, path + (i,))
        else:
            self.block(node, path)

    def template(self, value, path):
        try:
            compile_template(value)
        except TemplateSyntaxError as exc:
            self.error(path, exc.message)

    def block(self, node, path):
        if node is None or isinstance(node, (bool, int, float)):
            return
        if isinstance(node, str):
            self.template(node, path)
            return
        if isinstance(node, list):
            self.error(path, "a block cannot be a list; nest lists with text:, lastOf: or array:")
            return
        if not isinstance(node, dict):
            self.error(path, f"unsupported YAML value {node!r}")
            return
        bad_keys = [k for k in node if not isinstance(k, str)]
        if bad_keys:
            self.error(path, f"block keys must be strings, found {bad_keys[0]!r}")
            return
        kind, err = block_kind(node)
        if err:
            self.error(path, err)
            return
        if kind is None:
            unknown = [k for k in node if k not in ALL_KEYWORDS]
            msg = "unknown block kind: no body keyword found"
            if unknown:
                hint = suggest(unknown[0], BODY_KEYWORDS)
                msg = f"unknown block keyword {unknown[0]!r}"
                if hint:
                    msg += f"; did you mean {hint!r}?"
            self.error(path, msg)
            return
        fields, _ = KINDS[kind]
        allowed = set(fields) | set(COMMON_FIELDS)
        for key in node:
            if key not in allowed:
                hint = suggest(key, sorted(allowed))
                label = kind.split("_")[0]
                msg = f"unknown key {key!r} in {label} block"
                if hint:
                    msg += f"; did you mean {hint!r}?"
                self.error(path + (key,), msg)
        schema_errors = sorted(_VALIDATORS[kind].iter_errors(node), key=lambda e: list(map(str, e.absolute_path)))
        for e in schema_errors:
            self.error(path + tuple(e.absolute_path), self._message(e))
        if schema_errors:
            return
        self.children(kind, node, path)

    @staticmethod
    def _message(e) -> str:
        where = list(e.absolute_path)
        if where and where[0] == "contribute" and e.validator == "enum":
            return f"unknown contribute destination {e.instance!r} (expected 'result' or 'context')"
        if where and where[0] == "def" and e.validator == "pattern":
            return f"invalid variable name {e.instance!r}"
        if e.validator == "required":
            return e.message.replace("is a required property", "is required")
        field = ".".join(map(str, where)) or "block"
        return f"{field}: {e.message}"

    def children(self, kind, node, path):
        fields, _ = KINDS[kind]
        for key, slot in {**fields, **COMMON_FIELDS}.items():
            if key not in node:
                continue
            value = node[key]
            sub = path + (key,)
            if slot == PROGRAM:
                self.program(value, sub)
            elif slot == PROGRAM_MAP:
                for name, prog in value.items():
                    if not re.match(IDENT["pattern"], str(name)):
                        self.error(sub + (name,), f"invalid variable name {name!r}")
                    self.program(prog, sub + (name,))
            elif slot == OBJECT_BODY:
                if isinstance(value, dict):
                    for name, prog in value.items():
                        self.program(prog, sub + (name,))
                else:
                    self.program(value, sub)
            elif slot == TYPE:
                self.type(value, sub)
            elif slot == PARAMS:
                for name, t in (value or {}).items():
                    if not re.match(IDENT["pattern"], str(name)):
                        self.error(sub + (name,), f"invalid parameter name {name!r}")
                    if t is not None:
                        self.type(t, sub + (name,))
        for key in ("expr", "model", "call", "if", "until", "num_iterations", "message"):
            if key in node and key in fields and isinstance(node[key], str):
                self.template(node[key], path + (key,))
        if kind == "for":
            for name, v in node["for"].items():
                self.data_templates(v, path + ("for", name))
        if kind == "call" and "args" in node:
            self.data_templates(node["args"], path + ("args",))
        if kind == "data" and not node.get("raw", False):
            self.data_templates(node["data"], path + ("data",))

    def data_templates(self, tree, path):
        for sub, message in check_data_templates(tree):
            self.error(path + sub, message)

    def type(self, value, path):
        try:
            expand_type(value)
        except TypeSyntaxError as exc:
            self.error(path + tuple(exc.path), exc.message)


def _attach_positions(errors, positions) -> list[Diagnostic]:
    diags = []
    for path, message in errors:
        pos = None
        p = tuple(path)
        while pos is None:
            pos = positions.get(p)
            if not p:
                break
            p = p[:-1]
        line, col = pos if pos else (None, None)
        diags.append(Diagnostic("error", tuple(path), message, line, col))
    return diags


def validate_meta_schema(document, positions: dict | None = None) -> list[Diagnostic]:
    v = _Validator()
    v.program(document, ())
    return _attach_positions(v.errors, positions or {})


# ---------------------------------------------------------------------------
# Building the AST
# ---------------------------------------------------------------------------


def _contribute(node) -> Contribute:
    if "contribute" not in node:
        return Contribute()
    return Contribute.of(node["contribute"])


def _join(node) -> Join:
    j = node.get("join")
    if not j:
        return Join()
    as_ = j.get("as")
    if as_ is None:
        as_ = "text" if "with" in j else "lastOf"
    return Join(as_, j.get("with"))


def build_program(node, path=()) -> Program:
    if isinstance(node, list):
        return BlockList(tuple(build_block(x, path + (i,)) for i, x in enumerate(node)), path)
    return build_block(node, path)


def _opt_program(node, key, path):
    return build_program(node[key], path + (key,)) if key in node else None


def build_block(node, path=()) -> Block:
    if not isinstance(node, dict):
        return Block(ExprLeaf(compile_template(node)), path=path)
    kind, _ = block_kind(node)
    p = path
    if kind == "expr":
        body = ExprLeaf(compile_template(node["expr"]))
    elif kind == "model":
        body = Model(
            compile_template(node["model"]),
            _opt_program(node, "input", p),
            copy.deepcopy(node.get("parameters")),
        )
    elif kind == "read":
        msg = node.get("message")
        body = Read(node.get("read"), compile_template(msg) if msg is not None else None, node.get("multiline", False))
    elif kind == "text":
        body = Text(build_program(node["text"], p + ("text",)))
    elif kind == "lastOf":
        body = LastOf(build_program(node["lastOf"], p + ("lastOf",)))
    elif kind == "array":
        body = ArrayB(build_program(node["array"], p + ("array",)))
    elif kind == "object":
        obj = node["object"]
        if isinstance(obj, dict):
            body = ObjectB(fields={k: build_program(v, p + ("object", k)) for k, v in obj.items()})
        else:
            body = ObjectB(program=build_program(obj, p + ("object",)))
    elif kind == "data":
        body = Data(copy.deepcopy(node["data"]), node.get("raw", False))
    elif kind == "include":
        body = Include(node["include"])
    elif kind == "function":
        params = {k: (expand_type(t) if t is not None else None) for k, t in (node["function"] or {}).items()}
        body = Function(params, build_program(node["return"], p + ("return",)))
    elif kind == "call":
        body = Call(
            compile_template(node["call"]),
            copy.deepcopy(node.get("args", {})),
            _opt_program(node, "pdl_context", p),
        )
    elif kind == "if":
        body = If(compile_template(node["if"]), build_program(node["then"], p + ("then",)), _opt_program(node, "else", p))
    elif kind == "for":
        body = For(copy.deepcopy(node["for"]), build_program(node["repeat"], p + ("repeat",)), _join(node))
    elif kind == "repeat_until":
        body = RepeatUntil(build_program(node["repeat"], p + ("repeat",)), compile_template(node["until"]), _join(node))
    elif kind == "repeat_n":
        body = Repeat(build_program(node["repeat"], p + ("repeat",)), compile_template(node["num_iterations"]), _join(node))
    elif kind == "code":
        body = Code(build_program(node.get("code", ""), p + ("code",)), node["lang"])
    elif kind == "get":
        body = Get(node["get"])
    else:  # pragma: no cover - validation rejects this first
        raise PDLParseError([Diagnostic("error", path, "unknown block kind")])
    defs = {k: build_program(v, p + ("defs", k)) for k, v in (node.get("defs") or {}).items()}
    return Block(
        body,
        description=node.get("description"),
        def_=node.get("def"),
        defs=defs,
        role=node.get("role"),
        contribute=_contribute(node),
        parser=parser_from_data(node["parser"]) if "parser" in node else None,
        spec=expand_type(node["spec"]) if "spec" in node else None,
        path=path,
    )


def parse_program(source_text: str) -> Program:
    """Parse and validate a PDL document. Raises PDLParseError with diagnostics."""
    document, positions = load_yaml(source_text)
    diags = validate_meta_schema(document, positions)
    if diags:
        raise PDLParseError(diags)
    return build_program(document)


def check_source(source_text: str) -> list[Diagnostic]:
    try:
        document, positions = load_yaml(source_text)
    except PDLParseError as exc:
        return exc.diagnostics
    return validate_meta_schema(document, positions)


# ---------------------------------------------------------------------------
# Desugaring
# ---------------------------------------------------------------------------


def _as_body(program: Program) -> Block:
    """A bare list used where a block body is expected behaves like lastOf:."""
    program = desugar(program)
    if isinstance(program, BlockList):
        return Block(LastOf(program), path=program.path)
    return program


def _opt(program, fn):
    return fn(program) if program is not None else None


def desugar(program: Program) -> Program:
    if isinstance(program, BlockList):
        return replace(program, blocks=tuple(desugar(b) for b in program.blocks))
    b = program.body
    if isinstance(b, (Text, LastOf, ArrayB)):
        b = replace(b, program=desugar(b.program))
    elif isinstance(b, Model):
        b = replace(b, input=_opt(b.input, desugar))
    elif isinstance(b, ObjectB):
        if b.fields is not None:
            b = replace(b, fields={k: desugar(v) for k, v in b.fields.items()})
        else:
            b = replace(b, program=desugar(b.program))
    elif isinstance(b, Include):
        b = replace(b, program=_opt(b.program, desugar))
    elif isinstance(b, Function):
        b = replace(b, returns=_as_body(b.returns))
    elif isinstance(b, Call):
        b = replace(b, pdl_context=_opt(b.pdl_context, desugar))
    elif isinstance(b, If):
        b = replace(b, then=_as_body(b.then), else_=_opt(b.else_, _as_body))
    elif isinstance(b, (For, Repeat, RepeatUntil)):
        b = replace(b, body=_as_body(b.body))
    elif isinstance(b, Code):
        b = replace(b, source=desugar(b.source))
    defs = {k: _as_body(v) for k, v in program.defs.items()}
    return replace(program, body=b, defs=defs)


# ---------------------------------------------------------------------------
# Includes
# ---------------------------------------------------------------------------


def resolve_include(block: Include | Block, base_dir, stack: tuple = (), path: tuple = ()) -> Program:
    """Parse, desugar and recursively resolve the file an include: names."""
    inc = block.body if isinstance(block, Block) else block
    target = (Path(base_dir) / inc.file).resolve()
    if str(target) in stack:
        chain = " -> ".join(Path(p).name for p in stack + (str(target),))
        raise IncludeError([Diagnostic("error", path, f"include cycle: {chain}")])
    if not target.is_file():
        where = stack[-1] if stack else str(Path(base_dir).resolve())
        raise IncludeError(
            [Diagnostic("error", path, f"included file not found: {target} (included from {where})")]
        )
    program = parse_program(target.read_text(encoding="utf-8"))
    return resolve_includes(desugar(program), target.parent, stack + (str(target),))


def resolve_includes(program: Program, base_dir, stack: tuple = ()) -> Program:
    def walk(p):
        if p is None:
            return None
        if isinstance(p, BlockList):
            return replace(p, blocks=tuple(walk(b) for b in p.blocks))
        b = p.body
        if isinstance(b, Include):
            resolved = resolve_include(b, base_dir, stack, p.path)
            target = str((Path(base_dir) / b.file).resolve())
            b = replace(b, program=resolved, resolved=target)
        elif isinstance(b, (Text, LastOf, ArrayB)):
            b = replace(b, program=walk(b.program))
        elif isinstance(b, Model):
            b = replace(b, input=walk(b.input))
        elif isinstance(b, ObjectB):
            if b.fields is not None:
                b = replace(b, fields={k: walk(v) for k, v in b.fields.items()})
            else:
                b = replace(b, program=walk(b.program))
        elif isinstance(b, Function):
            b = replace(b, returns=walk(b.returns))
        elif isinstance(b, Call):
            b = replace(b, pdl_context=walk(b.pdl_context))
        elif isinstance(b, If):
            b = replace(b, then=walk(b.then), else_=walk(b.else_))
        elif isinstance(b, (For, Repeat, RepeatUntil)):
            b = replace(b, body=walk(b.body))
        elif isinstance(b, Code):
            b = replace(b, source=walk(b.source))
        return replace(p, body=b, defs={k: walk(v) for k, v in p.defs.items()})

    return walk(program)


def load_source(source_text: str, base_dir=".") -> Program:
    return resolve_includes(desugar(parse_program(source_text)), base_dir)


def load_file(path) -> Program:
    path = Path(path)
    return resolve_includes(
        desugar(parse_program(path.read_text(encoding="utf-8"))),
        path.parent,
        (str(path.resolve()),),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _expr_data(e: TemplateExpr):
    return e.source


def program_to_data(program: Program):
    if isinstance(program, BlockList):
        return [block_to_data(b) for b in program.blocks]
    return block_to_data(program)


def block_to_data(block: Block):
    b = block.body
    if isinstance(b, ExprLeaf) and not block.has_keywords():
        return _expr_data(b.expr)
    d: dict = {}
    if block.description is not None:
        d["description"] = block.description
    if block.defs:
        d["defs"] = {k: program_to_data(v) for k, v in block.defs.items()}
    if isinstance(b, ExprLeaf):
        d["expr"] = _expr_data(b.expr)
    elif isinstance(b, Model):
        d["model"] = _expr_data(b.model)
        if b.input is not None:
            d["input"] = program_to_data(b.input)
        if b.parameters is not None:
            d["parameters"] = copy.deepcopy(b.parameters)
    elif isinstance(b, Read):
        d["read"] = b.file
        if b.message is not None:
            d["message"] = _expr_data(b.message)
        if b.multiline:
            d["multiline"] = True
    elif isinstance(b, (Text, LastOf, ArrayB)):
        d[b.keyword] = program_to_data(b.program)
    elif isinstance(b, ObjectB):
        if b.fields is not None:
            d["object"] = {k: program_to_data(v) for k, v in b.fields.items()}
        else:
            d["object"] = program_to_data(b.program)
    elif isinstance(b, Data):
        d["data"] = copy.deepcopy(b.value)
        if b.raw:
            d["raw"] = True
    elif isinstance(b, Include):
        d["include"] = b.file
    elif isinstance(b, Function):
        d["function"] = {k: (type_to_data(t) if t is not None else None) for k, t in b.params.items()}
        d["return"] = program_to_data(b.returns)
    elif isinstance(b, Call):
        d["call"] = _expr_data(b.f)
        if b.args:
            d["args"] = copy.deepcopy(b.args)
        if b.pdl_context is not None:
            d["pdl_context"] = program_to_data(b.pdl_context)
    elif isinstance(b, If):
        d["if"] = _expr_data(b.cond)
        d["then"] = program_to_data(b.then)
        if b.else_ is not None:
            d["else"] = program_to_data(b.else_)
    elif isinstance(b, For):
        d["for"] = copy.deepcopy(b.bindings)
        d["repeat"] = program_to_data(b.body)
    elif isinstance(b, Repeat):
        d["repeat"] = program_to_data(b.body)
        d["num_iterations"] = _expr_data(b.n)
    elif isinstance(b, RepeatUntil):
        d["repeat"] = program_to_data(b.body)
        d["until"] = _expr_data(b.until)
    elif isinstance(b, Code):
        d["lang"] = b.lang
        d["code"] = program_to_data(b.source)
    elif isinstance(b, Get):
        d["get"] = b.name
    if isinstance(b, (For, Repeat, RepeatUntil)) and b.join != Join():
        j = {"as": b.join.as_}
        if b.join.with_ is not None:
            j["with"] = b.join.with_
        d["join"] = j
    if block.def_ is not None:
        d["def"] = block.def_
    if block.role is not None:
        d["role"] = block.role
    if block.contribute != Contribute():
        d["contribute"] = block.contribute.names()
    if block.parser is not None:
        d["parser"] = parser_to_data(block.parser)
    if block.spec is not None:
        d["spec"] = type_to_data(block.spec)
    return d


def dump_yaml(program: Program) -> str:
    return yaml.safe_dump(
        program_to_data(program),
        sort_keys=False,
        default_flow_style=False,
        allow_unicode=True,
        width=1 << 16,
    )


__all__ = [
    "block_kind",
    "build_program",
    "check_source",
    "desugar",
    "dump_yaml",
    "load_file",
    "load_source",
    "load_yaml",
    "meta_schema",
    "parse_program",
    "program_to_data",
    "resolve_include",
    "resolve_includes",
    "validate_meta_schema",
]
