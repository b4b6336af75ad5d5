"""Execution traces: one node per evaluated block, nested like the evaluation.

The JSON layout (``"schema": "pdl-trace/1"``) is meant for external viewers.
Timing is recorded only on request so that traces are reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any

from .errors import format_path
from .expr import stringify

SCHEMA = "pdl-trace/1"
PREVIEW_LIMIT = 2048

NODE_SCHEMA = {
    "type": "object",
    "required": [
        "kind", "doc_path", "role", "result_preview", "result_truncated",
        "contribution_preview", "contribution_truncated", "defs_bound", "timing_ms", "children",
    ],
    "properties": {
        "kind": {"type": "string"},
        "doc_path": {"type": "string"},
        "role": {"type": ["string", "null"]},
        "result_preview": {"type": "string", "maxLength": PREVIEW_LIMIT},
        "result_truncated": {"type": "boolean"},
        "contribution_preview": {"type": "string", "maxLength": PREVIEW_LIMIT},
        "contribution_truncated": {"type": "boolean"},
        "defs_bound": {"type": "array", "items": {"type": "string"}},
        "timing_ms": {"type": ["number", "null"]},
        "annotations": {"type": "object"},
        "error": {"type": "string"},
        "children": {"type": "array", "items": {"$ref": "#/$defs/node"}},
    },
    "additionalProperties": False,
}

TRACE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": SCHEMA,
    "type": "object",
    "required": ["schema", "root"],
    "properties": {"schema": {"const": SCHEMA}, "root": {"$ref": "#/$defs/node"}},
    "additionalProperties": False,
    "$defs": {"node": NODE_SCHEMA},
}


def _preview(text: str) -> tuple[str, bool]:
    if len(text) <= PREVIEW_LIMIT:
        return text, False
    return text[:PREVIEW_LIMIT], True


def _value_text(v) -> str:
    try:
        return stringify(v)
    except Exception:
        return f"<{type(v).__name__}>"


@dataclass
class TraceNode:
    kind: str
    doc_path: tuple
    role: str | None = None
    children: list = field(default_factory=list)
    result_preview: str = ""
    result_truncated: bool = False
    contribution_preview: str = ""
    contribution_truncated: bool = False
    defs_bound: list = field(default_factory=list)
    annotations: dict = field(default_factory=dict)
    error: str | None = None
    timing_ms: float | None = None
    _start: float = 0.0

    def to_json(self) -> dict:
        d: dict[str, Any] = {
            "kind": self.kind,
            "doc_path": format_path(self.doc_path),
            "role": self.role,
            "result_preview": self.result_preview,
            "result_truncated": self.result_truncated,
            "contribution_preview": self.contribution_preview,
            "contribution_truncated": self.contribution_truncated,
            "defs_bound": list(self.defs_bound),
            "timing_ms": self.timing_ms,
        }
        if self.annotations:
            d["annotations"] = dict(self.annotations)
        if self.error is not None:
            d["error"] = self.error
        d["children"] = [c.to_json() for c in self.children]
        return d


class TraceRecorder:
    def __init__(self, timing: bool = False):
        self.timing = timing
        self.root = TraceNode("program", ())
        self._stack = [self.root]

    def begin(self, kind: str, path: tuple, role: str | None = None) -> TraceNode:
        node = TraceNode(kind, tuple(path), role)
        if self.timing:
            node._start = time.perf_counter()
        self._stack[-1].children.append(node)
        self._stack.append(node)
        return node

    def _pop(self, node: TraceNode) -> None:
        if self.timing:
            node.timing_ms = round((time.perf_counter() - node._start) * 1000, 3)
        while self._stack and self._stack[-1] is not node:
            self._stack.pop()
        if len(self._stack) > 1:
            self._stack.pop()

    def end(self, node: TraceNode, value=None, contribution=(), defs_bound=(), **annotations) -> None:
        node.result_preview, node.result_truncated = _preview(_value_text(value))
        flat = "".join(m.content for m in contribution)
        node.contribution_preview, node.contribution_truncated = _preview(flat)
        node.defs_bound = list(defs_bound)
        node.annotations.update(annotations)
        self._pop(node)

    def fail(self, node: TraceNode, error: Exception) -> None:
        node.error = str(error)
        self._pop(node)

    def finish(self, value=None, contribution=()) -> None:
        self.root.result_preview, self.root.result_truncated = _preview(_value_text(value))
        flat = "".join(m.content for m in contribution)
        self.root.contribution_preview, self.root.contribution_truncated = _preview(flat)

    def to_json(self) -> dict:
        return {"schema": SCHEMA, "root": self.root.to_json()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"


def emit_trace(path, recorder: TraceRecorder) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(recorder.dumps())
