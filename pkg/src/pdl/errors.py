"""Exception hierarchy and diagnostics shared by every stage of the interpreter."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal


def format_path(path) -> str:
    if not path:
        return "<root>"
    out = ""
    for part in path:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out


@dataclass(frozen=True)
class Diagnostic:
    severity: Literal["error", "warning"]
    path: tuple
    message: str
    line: int | None = None
    column: int | None = None

    def format(self, filename: str = "<string>") -> str:
        line = self.line if self.line is not None else 0
        col = self.column if self.column is not None else 0
        where = format_path(self.path)
        return f"{filename}:{line}:{col}: {self.severity}: {self.message} (at {where})"

    def to_json(self) -> dict:
        return {
            "severity": self.severity,
            "path": list(self.path),
            "message": self.message,
            "line": self.line,
            "column": self.column,
        }


def diagnostics_json(diags) -> str:
    return json.dumps([d.to_json() for d in diags], indent=2)


class PDLError(Exception):
    """Base class. ``path`` is the document path of the block that failed."""

    def __init__(self, message: str, path: tuple | None = None):
        super().__init__(message)
        self.message = message
        self.path = path

    def __str__(self) -> str:
        if self.path is None:
            return self.message
        return f"{self.message} (at {format_path(self.path)})"


class PDLParseError(PDLError):
    """Raised when a document is not valid PDL; carries every diagnostic found."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        msg = first.message if first else "invalid program"
        if len(self.diagnostics) > 1:
            msg += f" (and {len(self.diagnostics) - 1} more)"
        super().__init__(msg, first.path if first else None)


class IncludeError(PDLParseError):
    pass


class TemplateSyntaxError(PDLError):
    pass


class EvalError(PDLError):
    """Any runtime failure while evaluating a program."""


class UndefinedVariable(EvalError):
    def __init__(self, name: str):
        super().__init__(f"undefined variable '{name}'")
        self.name = name


class ExprTypeError(EvalError):
    pass


class UnserializableValue(EvalError):
    def __init__(self, what: str = "closure"):
        super().__init__(f"unserializable value: {what}")


class ParserFailure(EvalError):
    """A ``parser:`` post-processor could not parse the block's result."""


@dataclass
class TypeMismatch:
    path: tuple
    expected: object
    found: object
    message: str = ""

    def __str__(self) -> str:
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in self.path)
        return self.message or f"{where}: expected {self.expected}, found {self.found!r}"


class SpecViolation(EvalError):
    def __init__(self, mismatch: TypeMismatch):
        super().__init__(f"type error: {mismatch}")
        self.mismatch = mismatch


class BackendError(EvalError):
    pass


class CodeError(EvalError):
    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message if not stderr else f"{message}\n{stderr}")
        self.stderr = stderr


class IterationLimit(EvalError):
    pass


@dataclass
class Warnings:
    """Collects non-fatal evaluation warnings (e.g. ``repeat`` with n < 1)."""

    items: list[Diagnostic] = field(default_factory=list)

    def warn(self, message: str, path: tuple = ()) -> None:
        self.items.append(Diagnostic("warning", tuple(path), message))
