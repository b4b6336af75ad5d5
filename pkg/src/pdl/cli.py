"""Command-line front end: ``pdl run | check | conformance | schema``."""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .ast import Message
from .backends import (
    BackendRegistry,
    CommandRunner,
    ConstantBackend,
    EchoBackend,
    OpenAIBackend,
    ScriptedBackend,
)
from .errors import Diagnostic, PDLError, PDLParseError, diagnostics_json
from .evaluator import Config, Interpreter, ScriptedInput, StreamInput, initial_env, run_top_level
from .expr import to_json
from .parser import check_source, load_file, load_yaml, meta_schema
from .trace import TRACE_SCHEMA, TraceRecorder, emit_trace

EXIT_OK, EXIT_EVAL, EXIT_PARSE = 0, 1, 2

GREEN, RESET = "\x1b[32m", "\x1b[0m"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Flag parsing helpers
# ---------------------------------------------------------------------------


def parse_data_flag(item: str):
    name, eq, raw = item.partition("=")
    if not eq or not name:
        raise UsageError(f"--data expects NAME=VALUE, got {item!r}")
    try:
        return name, json.loads(raw)
    except ValueError:
        return name, raw


def _read_json_or_text(path: str):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text), text
    except ValueError:
        return None, text


def load_context_file(path: str) -> tuple:
    data, text = _read_json_or_text(path)
    if isinstance(data, list) and all(isinstance(m, dict) and "content" in m for m in data):
        return tuple(Message(m.get("role", "user"), str(m["content"])) for m in data)
    if isinstance(data, str):
        return (Message("user", data),)
    return (Message("user", text),)


def load_stdin_script(path: str) -> list[str]:
    data, text = _read_json_or_text(path)
    if isinstance(data, list) and all(isinstance(x, str) for x in data):
        return data
    return text.splitlines()


def build_backend(spec: str):
    """``KIND[=CONFIG]`` -> (prefix, backend)."""
    kind, _, config = spec.partition("=")
    if kind == "scripted":
        if not config:
            raise UsageError("--backend scripted=FILE needs a JSON file with a list of responses")
        data, _ = _read_json_or_text(config)
        if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
            raise UsageError(f"{config}: expected a JSON array of strings")
        return "scripted", ScriptedBackend(data)
    if kind == "echo":
        return "echo", EchoBackend()
    if kind == "mock":
        return "mock", ConstantBackend(config or "ok")
    if kind == "openai":
        return "openai", OpenAIBackend(base_url=config or None)
    raise UsageError(f"unknown backend kind {kind!r} (expected scripted, echo, mock or openai)")


def build_registry(specs: list[str]) -> BackendRegistry:
    registry = BackendRegistry({"echo": EchoBackend(), "mock": ConstantBackend(), "openai": OpenAIBackend()})
    for spec in specs:
        prefix, backend = build_backend(spec)
        registry.register(prefix, backend, default=True)
    return registry


def build_runners(specs: list[str], sandbox: bool, timeout: float) -> dict:
    runners = {}
    for spec in specs:
        lang, eq, cmd = spec.partition("=")
        if not eq or not lang or not cmd:
            raise UsageError(f"--code-runner expects LANG=COMMAND, got {spec!r}")
        runners[lang] = CommandRunner(shlex.split(cmd), timeout=timeout, sandbox=sandbox)
    return runners


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


class ModelEcho:
    """Writes model output to stdout; streaming changes only when bytes appear."""

    def __init__(self, out, stream: bool, color: bool):
        self.out = out
        self.stream = stream
        self.color = color

    def _write(self, text: str) -> None:
        if not text:
            return
        self.out.write(f"{GREEN}{text}{RESET}" if self.color else text)
        self.out.flush()

    def chunk(self, text: str) -> None:
        self._write(text)

    def done(self, text: str) -> None:
        if not self.stream:
            self._write(text)
        if not text.endswith("\n"):
            self.out.write("\n")
            self.out.flush()


def format_value(v) -> str:
    return v if isinstance(v, str) else to_json(v)


def _diagnostic_for(exc: PDLError, source_text: str | None) -> Diagnostic:
    line = col = None
    if source_text is not None and exc.path is not None:
        try:
            _, positions = load_yaml(source_text)
        except PDLParseError:
            positions = {}
        p = tuple(exc.path)
        while True:
            if p in positions:
                line, col = positions[p]
                break
            if not p:
                break
            p = p[:-1]
    return Diagnostic("error", tuple(exc.path or ()), exc.message, line, col)


def report(diags: list[Diagnostic], filename: str, as_json: bool, err) -> None:
    if as_json:
        err.write(diagnostics_json(diags) + "\n")
    else:
        for d in diags:
            err.write(d.format(filename) + "\n")
    err.flush()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(args, out=None, err=None, stdin=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    filename = args.file
    try:
        source_text = Path(filename).read_text(encoding="utf-8")
    except OSError as exc:
        err.write(f"{filename}: error: cannot read file: {exc.strerror or exc}\n")
        return EXIT_PARSE
    try:
        data = dict(parse_data_flag(d) for d in args.data)
        context = load_context_file(args.context) if args.context else ()
        registry = build_registry(args.backend)
        runners = build_runners(args.code_runner, args.sandbox, args.code_timeout)
        script = ScriptedInput(load_stdin_script(args.stdin_script)) if args.stdin_script else None
    except (UsageError, OSError) as exc:
        err.write(f"pdl: error: {exc}\n")
        return EXIT_PARSE
    try:
        program = load_file(filename)
    except PDLParseError as exc:
        report(exc.diagnostics, filename, args.json, err)
        return EXIT_PARSE

    echo = ModelEcho(out, args.stream, color=_isatty(out))
    tracer = TraceRecorder(timing=args.trace_timing) if args.trace else None
    interp = Interpreter(
        backends=registry,
        runners=runners,
        stdin=script if script is not None else StreamInput(stdin),
        tracer=tracer,
        config=Config(until_polarity=args.until_polarity, max_iterations=args.max_iterations),
        on_model_chunk=echo.chunk if args.stream else None,
        on_model_done=echo.done,
        on_prompt=lambda m: (err.write(m), err.flush()),
    )
    code = EXIT_OK
    result = None
    try:
        result = run_top_level(interp, initial_env(data, context), program, Path(filename).parent)
    except PDLParseError as exc:
        report(exc.diagnostics, filename, args.json, err)
        code = EXIT_PARSE
    except PDLError as exc:
        report([_diagnostic_for(exc, source_text)], filename, args.json, err)
        code = EXIT_EVAL
    for w in interp.warnings.items:
        report([w], filename, args.json, err)
    if result is not None:
        value = result.display_value
        text = format_value(value)
        if text:
            out.write(text if text.endswith("\n") else text + "\n")
            out.flush()
        if tracer is not None:
            tracer.finish(value, result.outcome.contribution)
    if tracer is not None:
        try:
            emit_trace(args.trace, tracer)
        except OSError as exc:
            err.write(f"{args.trace}: error: cannot write trace: {exc.strerror or exc}\n")
            code = code or EXIT_EVAL
    return code


def cmd_check(args, out=None, err=None) -> int:
    err = err or sys.stderr
    filename = args.file
    try:
        text = Path(filename).read_text(encoding="utf-8")
    except OSError as exc:
        err.write(f"{filename}: error: cannot read file: {exc.strerror or exc}\n")
        return EXIT_PARSE
    diags = check_source(text)
    if not diags:
        try:
            load_file(filename)
        except PDLParseError as exc:
            diags = exc.diagnostics
    if diags:
        report(diags, filename, args.json, err)
        return EXIT_PARSE
    return EXIT_OK


def cmd_conformance(args, out=None, err=None) -> int:
    from .refsem import conformance_table, run_conformance

    out = out or sys.stdout
    results, seconds = run_conformance()
    out.write(conformance_table(results) + "\n")
    out.write(f"elapsed: {seconds:.3f} s\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_EVAL


def cmd_schema(args, out=None, err=None) -> int:
    out = out or sys.stdout
    schema = TRACE_SCHEMA if getattr(args, "trace", False) else meta_schema()
    out.write(json.dumps(schema, indent=2) + "\n")
    return EXIT_OK


def _isatty(stream) -> bool:
    try:
        return stream.isatty()
    except (AttributeError, ValueError):
        return False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdl", description="Prompt Declaration Language interpreter")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a program")
    run.add_argument("file")
    run.add_argument("--data", action="append", default=[], metavar="NAME=VALUE",
                     help="initial binding; VALUE is parsed as JSON, else taken as a string")
    run.add_argument("--context", metavar="FILE", help="initial context: JSON messages or plain text")
    run.add_argument("--backend", action="append", default=[], metavar="KIND=CONFIG",
                     help="scripted=FILE, echo, mock=TEXT or openai=BASE_URL; the last one is the default")
    run.add_argument("--stream", action=argparse.BooleanOptionalAction, default=True,
                     help="echo model output as it is produced (default)")
    run.add_argument("--trace", metavar="PATH", help="write a JSON execution trace")
    run.add_argument("--trace-timing", action="store_true", help="record per-block timings in the trace")
    run.add_argument("--sandbox", action="store_true",
                     help="run code runners with an empty environment in a temporary directory")
    run.add_argument("--until-polarity", choices=("example", "appendix"), default="example",
                     help="example: stop when until: is true (default); appendix: continue while true")
    run.add_argument("--max-iterations", type=int, default=1_000_000)
    run.add_argument("--stdin-script", metavar="FILE", help="answer read: blocks from FILE instead of stdin")
    run.add_argument("--code-runner", action="append", default=[], metavar="LANG=COMMAND",
                     help="external interpreter for code blocks with lang: LANG")
    run.add_argument("--code-timeout", type=float, default=30.0)
    run.add_argument("--json", action="store_true", help="print diagnostics as JSON")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="validate a program without running it")
    check.add_argument("file")
    check.add_argument("--json", action="store_true")
    check.set_defaults(func=cmd_check)

    conf = sub.add_parser("conformance", help="run the rule-by-rule conformance table")
    conf.set_defaults(func=cmd_conformance)

    schema = sub.add_parser("schema", help="print the meta-schema")
    schema.add_argument("--trace", action="store_true", help="print the trace format schema instead")
    schema.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
