"""Abstract syntax of PDL programs and the runtime value universe.

Runtime values are plain Python JSON data (``None``, ``bool``, ``int``,
``float``, ``str``, ``list``, ``dict``) plus :class:`Closure`.  Nothing in the
interpreter mutates a value after it has been produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, NamedTuple, Union

from .errors import UndefinedVariable

ROLES = ("user", "assistant", "system", "tool")
CONTEXT = "context"


# ---------------------------------------------------------------------------
# Messages and contributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Message:
    """One role-tagged chunk of background context.

    Messages compare by value through :meth:`same`; plain ``==`` is identity so
    that the top-level runner can tell which contributed messages already
    reached the context variable.
    """

    role: str
    content: str

    def same(self, other: "Message") -> bool:
        return self.role == other.role and self.content == other.content

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}

    def __repr__(self) -> str:
        return f"Message({self.role!r}, {self.content!r})"


Contribution = tuple  # tuple[Message, ...]


def flatten(contribution: Iterable[Message]) -> str:
    return "".join(m.content for m in contribution)


def messages_equal(a: Iterable[Message], b: Iterable[Message]) -> bool:
    a, b = list(a), list(b)
    return len(a) == len(b) and all(x.same(y) for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Types (``spec:`` and function parameters)
# ---------------------------------------------------------------------------


class TypeSpec:
    pass


@dataclass(frozen=True)
class PrimType(TypeSpec):
    name: str  # str | bool | int | float | null | obj

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ArrayType(TypeSpec):
    item: TypeSpec

    def __str__(self) -> str:
        return f"[{self.item}]"


@dataclass(frozen=True)
class ObjectType(TypeSpec):
    """Fields are required unless their type is :class:`OptionalType`."""

    fields: tuple  # tuple[tuple[str, TypeSpec], ...]

    def __str__(self) -> str:
        return "{" + ", ".join(f"{k}: {v}" for k, v in self.fields) + "}"


@dataclass(frozen=True)
class EnumType(TypeSpec):
    values: tuple

    def __str__(self) -> str:
        return f"enum{list(self.values)}"


@dataclass(frozen=True)
class OptionalType(TypeSpec):
    inner: TypeSpec

    def __str__(self) -> str:
        return f"optional {self.inner}"


# ---------------------------------------------------------------------------
# Block keywords
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Contribute:
    result: bool = True
    context: bool = True

    @classmethod
    def of(cls, names: Iterable[str]) -> "Contribute":
        names = set(names)
        return cls(result="result" in names, context="context" in names)

    def names(self) -> list[str]:
        return [n for n, on in (("result", self.result), ("context", self.context)) if on]


@dataclass(frozen=True)
class Join:
    as_: str = "lastOf"  # text | array | lastOf
    with_: str | None = None


@dataclass(frozen=True)
class ParserKind:
    kind: str  # json | yaml | jsonl | regex
    pattern: str | None = None
    mode: str = "fullmatch"


# ---------------------------------------------------------------------------
# Programs and blocks
# ---------------------------------------------------------------------------


class BlockBody:
    keyword = ""


@dataclass(frozen=True)
class Block:
    body: BlockBody
    description: str | None = None
    def_: str | None = None
    defs: Mapping[str, "Program"] = field(default_factory=dict)
    role: str | None = None
    contribute: Contribute = Contribute()
    parser: ParserKind | None = None
    spec: TypeSpec | None = None
    path: tuple = field(default=(), compare=False)

    @property
    def kind(self) -> str:
        return self.body.keyword

    def has_keywords(self) -> bool:
        return bool(
            self.description is not None
            or self.def_ is not None
            or self.defs
            or self.role is not None
            or self.contribute != Contribute()
            or self.parser is not None
            or self.spec is not None
        )


@dataclass(frozen=True)
class BlockList:
    blocks: tuple
    path: tuple = field(default=(), compare=False)


Program = Union[Block, BlockList]


def program_blocks(program: Program) -> tuple:
    return program.blocks if isinstance(program, BlockList) else (program,)


@dataclass(frozen=True)
class ExprLeaf(BlockBody):
    expr: Any  # expr.TemplateExpr
    keyword = "expr"


@dataclass(frozen=True)
class Model(BlockBody):
    model: Any
    input: Program | None = None
    parameters: Mapping[str, Any] | None = None
    keyword = "model"


@dataclass(frozen=True)
class Read(BlockBody):
    file: str | None = None
    message: str | None = None
    multiline: bool = False
    keyword = "read"


@dataclass(frozen=True)
class Text(BlockBody):
    program: Program
    keyword = "text"


@dataclass(frozen=True)
class LastOf(BlockBody):
    program: Program
    keyword = "lastOf"


@dataclass(frozen=True)
class ArrayB(BlockBody):
    program: Program
    keyword = "array"


@dataclass(frozen=True)
class ObjectB(BlockBody):
    """Either ``fields`` (name -> program) or ``program`` (children yield objects)."""

    fields: Mapping[str, Program] | None = None
    program: Program | None = None
    keyword = "object"


@dataclass(frozen=True)
class Data(BlockBody):
    value: Any
    raw: bool = False
    keyword = "data"


@dataclass(frozen=True)
class Include(BlockBody):
    file: str
    program: Program | None = field(default=None, compare=False)
    resolved: str | None = field(default=None, compare=False)
    keyword = "include"


@dataclass(frozen=True)
class Function(BlockBody):
    params: Mapping[str, TypeSpec | None]
    returns: Program
    keyword = "function"


@dataclass(frozen=True)
class Call(BlockBody):
    f: Any
    args: Mapping[str, Any] = field(default_factory=dict)
    pdl_context: Program | None = None
    keyword = "call"


@dataclass(frozen=True)
class If(BlockBody):
    cond: Any
    then: Program
    else_: Program | None = None
    keyword = "if"


@dataclass(frozen=True)
class For(BlockBody):
    bindings: Mapping[str, Any]
    body: Program
    join: Join = Join()
    keyword = "for"


@dataclass(frozen=True)
class Repeat(BlockBody):
    body: Program
    n: Any
    join: Join = Join()
    keyword = "repeat"


@dataclass(frozen=True)
class RepeatUntil(BlockBody):
    body: Program
    until: Any
    join: Join = Join()
    keyword = "repeat"


@dataclass(frozen=True)
class Code(BlockBody):
    source: Program
    lang: str
    keyword = "code"


@dataclass(frozen=True)
class Get(BlockBody):
    name: str
    keyword = "get"


def default_role(body: BlockBody) -> str:
    return "assistant" if isinstance(body, Model) else "user"


# ---------------------------------------------------------------------------
# Closures and environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Closure:
    params: Mapping[str, TypeSpec | None]
    body: Program
    env: "Env"

    def __repr__(self) -> str:
        return f"<closure ({', '.join(self.params)})>"


class Binding(NamedTuple):
    value: Any
    contribution: tuple


class Env:
    """Persistent environment: ``bind`` and ``with_context`` return new objects.

    The reserved ``context`` name is derived from the stored message list, so
    its value (the flattened string) and its contribution never drift apart.
    """

    __slots__ = ("_bindings", "_context", "_flat")

    def __init__(self, bindings: Mapping[str, Binding] | None = None, context: Iterable[Message] = ()):
        self._bindings = dict(bindings or {})
        self._context = tuple(context)
        self._flat: str | None = None

    @property
    def context(self) -> tuple:
        return self._context

    def context_text(self) -> str:
        if self._flat is None:
            self._flat = flatten(self._context)
        return self._flat

    def lookup(self, name: str) -> Binding:
        if name == CONTEXT:
            return Binding(self.context_text(), self._context)
        try:
            return self._bindings[name]
        except KeyError:
            raise UndefinedVariable(name) from None

    def lookup_value(self, name: str):
        if name == CONTEXT:
            return self.context_text()
        try:
            return self._bindings[name].value
        except KeyError:
            raise UndefinedVariable(name) from None

    def __contains__(self, name: str) -> bool:
        return name == CONTEXT or name in self._bindings

    def bind(self, name: str, value, contribution: Iterable[Message]) -> "Env":
        if name == CONTEXT:
            return self.with_context(contribution)
        new = dict(self._bindings)
        new[name] = Binding(value, tuple(contribution))
        return Env._make(new, self._context)

    def with_context(self, messages: Iterable[Message]) -> "Env":
        return Env._make(self._bindings, tuple(messages))

    def names(self) -> list[str]:
        return list(self._bindings)

    def items(self):
        return self._bindings.items()

    @classmethod
    def _make(cls, bindings: dict, context: tuple) -> "Env":
        env = cls.__new__(cls)
        env._bindings = bindings
        env._context = context
        env._flat = None
        return env

    def __repr__(self) -> str:
        return f"Env({sorted(self._bindings)}, context={len(self._context)} msgs)"
