"""Big-step evaluator: ``<S, p> => <S', v, s>`` over the full language.

The environment ``S`` is an :class:`~pdl.ast.Env`, ``v`` a plain value and
``s`` a tuple of :class:`~pdl.ast.Message`.  Flattening ``s`` gives the string
of the string-only rules; roles ride along on each message.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, NamedTuple

from .ast import (
    ArrayB,
    Block,
    BlockList,
    Call,
    Closure,
    Code,
    Data,
    Env,
    ExprLeaf,
    For,
    Function,
    Get,
    If,
    Include,
    Join,
    LastOf,
    Message,
    Model,
    ObjectB,
    Program,
    Read,
    Repeat,
    RepeatUntil,
    Text,
    default_role,
)
from .backends import (
    BackendRegistry,
    CodeRunner,
    ConstantBackend,
    ModelRequest,
    Session,
    default_runners,
    run_code,
)
from .errors import (
    BackendError,
    EvalError,
    ExprTypeError,
    IterationLimit,
    PDLError,
    SpecViolation,
    Warnings,
)
from .expr import eval_condition, eval_expr, expand_data, stringify, type_name
from .typecheck import apply_parser, check_spec


class EvalOutcome(NamedTuple):
    env: Env
    value: Any
    contribution: tuple


@dataclass(frozen=True)
class Scope:
    """Lexical information that is not part of ``S``: the inherited role and
    the directory relative paths resolve against."""

    role: str | None = None
    base_dir: Path = Path(".")


# ---------------------------------------------------------------------------
# stdin
# ---------------------------------------------------------------------------


class InputSource:
    def read_line(self) -> str | None:
        raise NotImplementedError

    def read_all(self) -> str:
        raise NotImplementedError


class StreamInput(InputSource):
    def __init__(self, stream=None):
        self.stream = stream

    def _s(self):
        return self.stream if self.stream is not None else sys.stdin

    def read_line(self):
        line = self._s().readline()
        if line == "":
            return None
        return line[:-1] if line.endswith("\n") else line

    def read_all(self):
        return self._s().read()


class ScriptedInput(InputSource):
    """Deterministic stdin: a fixed list of lines."""

    def __init__(self, lines: Iterable[str]):
        self.lines = list(lines)
        self.position = 0

    def read_line(self):
        if self.position >= len(self.lines):
            return None
        line = self.lines[self.position]
        self.position += 1
        return line

    def read_all(self):
        rest = self.lines[self.position :]
        self.position = len(self.lines)
        return "".join(line + "\n" for line in rest)


# ---------------------------------------------------------------------------
# Trace hooks
# ---------------------------------------------------------------------------


class NullTracer:
    def begin(self, kind: str, path: tuple, role: str | None = None):
        return None

    def end(self, node, value=None, contribution=(), **annotations) -> None:
        pass

    def fail(self, node, error: Exception) -> None:
        pass


NULL_TRACER = NullTracer()


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------


@dataclass
class Config:
    until_polarity: str = "example"  # "example": stop when true; "appendix": stop when false
    max_iterations: int = 1_000_000


def _lookup(env: Env) -> Callable[[str], Any]:
    return env.lookup_value


class Interpreter:
    def __init__(
        self,
        backends: BackendRegistry | None = None,
        runners: dict[str, CodeRunner] | None = None,
        stdin: InputSource | None = None,
        tracer=None,
        config: Config | None = None,
        on_model_chunk: Callable[[str], None] | None = None,
        on_model_done: Callable[[str], None] | None = None,
        on_prompt: Callable[[str], None] | None = None,
        session: Session | None = None,
    ):
        self.backends = backends if backends is not None else BackendRegistry(default=ConstantBackend())
        self.runners = dict(default_runners())
        self.runners["pdl"] = PdlRunner(self)
        if runners:
            self.runners.update(runners)
        self.stdin = stdin if stdin is not None else StreamInput()
        self.tracer = tracer if tracer is not None else NULL_TRACER
        self.config = config or Config()
        self.on_model_chunk = on_model_chunk
        self.on_model_done = on_model_done
        self.on_prompt = on_prompt if on_prompt is not None else _stderr_prompt
        self.session = session if session is not None else Session()
        self.warnings = Warnings()

    # -- programs -----------------------------------------------------------

    def eval_program(self, env: Env, program: Program, scope: Scope = Scope()) -> EvalOutcome:
        if isinstance(program, Block):
            return self.eval_block(env, program, scope)
        return self._eval_list(env, program.blocks, scope, lambda b, e: self.eval_block(e, b, scope))

    @staticmethod
    def _eval_list(env: Env, items, scope, step) -> EvalOutcome:
        """Empty, singleton and cons rules: each element sees the context grown
        by its predecessors' contributions."""
        values, contrib = [], []
        cur = env
        for i, item in enumerate(items):
            out = step(item, cur)
            values.append(out.value)
            contrib.extend(out.contribution)
            if i == len(items) - 1:
                cur = out.env
            else:
                cur = out.env.with_context(cur.context + out.contribution)
        return EvalOutcome(cur, values, tuple(contrib))

    # -- blocks -------------------------------------------------------------

    def eval_block(self, env: Env, block: Block, scope: Scope = Scope()) -> EvalOutcome:
        role = block.role or scope.role or default_role(block.body)
        inner = Scope(block.role or scope.role, scope.base_dir)
        node = self.tracer.begin(_trace_kind(block), block.path, role)
        try:
            for name, prog in block.defs.items():
                out = self.eval_program(env, prog, inner)
                env = env.bind(name, out.value, out.contribution)
            env1, value, contrib = self.eval_body(env, block.body, role, inner, block.path)
            annotations = {}
            if block.parser is not None:
                raw = value if isinstance(value, str) else stringify(value)
                value = apply_parser(block.parser, raw)
                annotations["parser"] = block.parser.kind
            if block.spec is not None:
                bad = check_spec(value, block.spec)
                if bad is not None:
                    raise SpecViolation(bad)
                annotations["spec"] = str(block.spec)
            if block.def_ is not None:
                env1 = env1.bind(block.def_, value, contrib)
            if not block.contribute.context:
                contrib = ()
            if not block.contribute.result:
                value = ""
        except PDLError as exc:
            if exc.path is None:
                exc.path = block.path
            self.tracer.fail(node, exc)
            raise
        defs_bound = list(block.defs) + ([block.def_] if block.def_ else [])
        self.tracer.end(node, value, contrib, defs_bound=defs_bound, **annotations)
        return EvalOutcome(env1, value, contrib)

    def eval_body(self, env: Env, body, role: str, scope: Scope, path: tuple) -> EvalOutcome:
        method = getattr(self, "_eval_" + type(body).__name__)
        return method(env, body, role, scope, path)

    def _msg(self, role: str, value) -> tuple:
        return (Message(role, stringify(value)),)

    # -- leaves -------------------------------------------------------------

    def _eval_ExprLeaf(self, env, body: ExprLeaf, role, scope, path):
        v = eval_expr(_lookup(env), body.expr)
        return EvalOutcome(env, v, self._msg(role, v))

    def _eval_Data(self, env, body: Data, role, scope, path):
        v = copy.deepcopy(body.value) if body.raw else expand_data(_lookup(env), body.value)
        return EvalOutcome(env, v, self._msg(role, v))

    def _eval_Get(self, env, body: Get, role, scope, path):
        binding = env.lookup(body.name)
        return EvalOutcome(env, binding.value, binding.contribution)

    def _eval_Read(self, env, body: Read, role, scope, path):
        msgs = []
        if body.message is not None:
            message = stringify(eval_expr(_lookup(env), body.message))
            self.on_prompt(message)
            msgs.append(Message(role, message))
        if body.file is not None:
            target = scope.base_dir / body.file
            try:
                text = target.read_text(encoding="utf-8")
            except OSError as exc:
                raise EvalError(f"cannot read {target}: {exc.strerror or exc}") from None
        elif body.multiline:
            text = self.stdin.read_all()
        else:
            text = self.stdin.read_line()
            if text is None:
                raise EvalError("end of input while reading from stdin")
        msgs.append(Message(role, text))
        return EvalOutcome(env, text, tuple(msgs))

    def _eval_Model(self, env, body: Model, role, scope, path):
        model_id = eval_expr(_lookup(env), body.model)
        if not isinstance(model_id, str):
            raise EvalError(f"model id must be a string, got {type_name(model_id)}")
        if body.input is not None:
            prompt = self.eval_program(env, body.input, scope).contribution
        else:
            prompt = env.context
        request = ModelRequest(model_id, tuple(prompt), dict(body.parameters or {}))
        backend = self.backends.resolve(model_id)
        try:
            text = backend.generate(request, self.on_model_chunk)
        except BackendError as exc:
            if model_id in exc.message:
                raise
            raise BackendError(f"model {model_id}: {exc.message}") from None
        except PDLError:
            raise
        except Exception as exc:  # backend bugs surface as evaluation errors
            raise EvalError(f"model {model_id}: {type(exc).__name__}: {exc}") from None
        if self.on_model_done is not None:
            self.on_model_done(text)
        return EvalOutcome(env, text, self._msg(role, text))

    def _eval_Code(self, env, body: Code, role, scope, path):
        source = "".join(m.content for m in self.eval_program(env, body.source, scope).contribution)
        v = run_code(self.runners, body.lang, source, self.session)
        return EvalOutcome(env, v, self._msg(role, v))

    def _eval_Function(self, env, body: Function, role, scope, path):
        return EvalOutcome(env, Closure(dict(body.params), body.returns, env), ())

    def _eval_Call(self, env, body: Call, role, scope, path):
        f = eval_expr(_lookup(env), body.f)
        if not isinstance(f, Closure):
            raise EvalError(f"call target is not a function but {type_name(f)}")
        args = expand_data(_lookup(env), body.args or {})
        missing = [p for p in f.params if p not in args]
        extra = [a for a in args if a not in f.params]
        if missing or extra:
            parts = []
            if missing:
                parts.append("missing argument(s) " + ", ".join(missing))
            if extra:
                parts.append("unexpected argument(s) " + ", ".join(extra))
            raise EvalError("; ".join(parts))
        if body.pdl_context is not None:
            ctx = self.eval_program(env, body.pdl_context, scope).contribution
        else:
            ctx = env.context
        callee = f.env.with_context(ctx)
        for name, spec in f.params.items():
            v = args[name]
            if spec is not None:
                bad = check_spec(v, spec)
                if bad is not None:
                    raise SpecViolation(replace(bad, message=f"argument {name!r}: {bad}"))
            callee = callee.bind(name, v, (Message("user", stringify(v)),))
        out = self.eval_program(callee, f.body, scope)
        return EvalOutcome(env, out.value, out.contribution)

    def _eval_Include(self, env, body: Include, role, scope, path):
        program = body.program
        base = scope.base_dir
        if program is None:
            from .parser import resolve_include

            program = resolve_include(body, scope.base_dir, (), path)
        if body.resolved:
            base = Path(body.resolved).parent
        out = self.eval_program(env, program, Scope(scope.role, base))
        if isinstance(program, BlockList):
            return EvalOutcome(out.env, out.value[-1] if out.value else "", out.contribution)
        return out

    # -- data builders ------------------------------------------------------

    def _children(self, env, program, scope) -> EvalOutcome:
        return self.eval_program(env, program, scope)

    def _eval_LastOf(self, env, body: LastOf, role, scope, path):
        out = self._children(env, body.program, scope)
        if isinstance(body.program, BlockList):
            return EvalOutcome(out.env, out.value[-1] if out.value else "", out.contribution)
        return out

    def _eval_Text(self, env, body: Text, role, scope, path):
        out = self._children(env, body.program, scope)
        values = out.value if isinstance(body.program, BlockList) else [out.value]
        return EvalOutcome(out.env, "".join(stringify(v) for v in values), out.contribution)

    def _eval_ArrayB(self, env, body: ArrayB, role, scope, path):
        out = self._children(env, body.program, scope)
        values = out.value if isinstance(body.program, BlockList) else [out.value]
        return EvalOutcome(out.env, list(values), out.contribution)

    def _eval_ObjectB(self, env, body: ObjectB, role, scope, path):
        if body.fields is not None:
            names = list(body.fields)
            out = self._eval_list(
                env, names, scope, lambda k, e: self.eval_program(e, body.fields[k], scope)
            )
            return EvalOutcome(out.env, dict(zip(names, out.value)), out.contribution)
        out = self._children(env, body.program, scope)
        values = out.value if isinstance(body.program, BlockList) else [out.value]
        merged: dict = {}
        for i, v in enumerate(values):
            if not isinstance(v, dict):
                raise ExprTypeError(f"object: item {i} yields {type_name(v)}, not an object")
            merged.update(v)
        return EvalOutcome(out.env, merged, out.contribution)

    # -- control ------------------------------------------------------------

    def _eval_If(self, env, body: If, role, scope, path):
        if eval_condition(_lookup(env), body.cond):
            return self.eval_program(env, body.then, scope)
        if body.else_ is not None:
            return self.eval_program(env, body.else_, scope)
        return EvalOutcome(env, "", ())

    def _iteration(self, env, program, scope, path, index) -> EvalOutcome:
        node = self.tracer.begin("iteration", path, scope.role)
        try:
            out = self.eval_program(env, program, scope)
        except PDLError as exc:
            self.tracer.fail(node, exc)
            raise
        self.tracer.end(node, out.value, out.contribution, index=index)
        return out

    def _join(self, join: Join, role, env, outs: list[EvalOutcome]) -> EvalOutcome:
        if join.as_ == "lastOf":
            if not outs:
                return EvalOutcome(env, "", ())
            return outs[-1]
        final_env = outs[-1].env if outs else env
        if join.as_ == "array":
            value = [o.value for o in outs]
            contrib = self._msg(role, value) if outs else ()
            return EvalOutcome(final_env, value, contrib)
        value = (join.with_ or "").join(stringify(o.value) for o in outs)
        return EvalOutcome(final_env, value, (Message(role, value),) if outs else ())

    def _eval_Repeat(self, env, body: Repeat, role, scope, path):
        n = eval_expr(_lookup(env), body.n)
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        if not isinstance(n, int) or isinstance(n, bool):
            raise ExprTypeError(f"repeat count must be an integer, got {type_name(n)}")
        if n < 1:
            self.warnings.warn(f"repeat count {n} < 1; the body runs once", path)
        outs = []
        cur = env
        for i in range(max(n, 1)):
            out = self._iteration(cur, body.body, scope, path, i)
            outs.append(out)
            cur = out.env.with_context(cur.context + out.contribution)
        return self._join(body.join, role, env, outs)

    def _eval_RepeatUntil(self, env, body: RepeatUntil, role, scope, path):
        stop_on = self.config.until_polarity != "appendix"
        outs = []
        cur = env
        i = 0
        while True:
            if i >= self.config.max_iterations:
                raise IterationLimit(f"repeat-until exceeded {self.config.max_iterations} iterations")
            out = self._iteration(cur, body.body, scope, path, i)
            outs.append(out)
            i += 1
            if eval_condition(_lookup(out.env), body.until) == stop_on:
                break
            cur = out.env.with_context(cur.context + out.contribution)
        return self._join(body.join, role, env, outs)

    def _eval_For(self, env, body: For, role, scope, path):
        lists = {}
        for name, expr in body.bindings.items():
            v = expand_data(_lookup(env), expr)
            if not isinstance(v, list):
                raise ExprTypeError(f"for: binding {name!r} must be an array, got {type_name(v)}")
            lists[name] = v
        lengths = {len(v) for v in lists.values()}
        if len(lengths) > 1:
            desc = ", ".join(f"{k} has {len(v)}" for k, v in lists.items())
            raise ExprTypeError(f"for: bindings have different lengths ({desc})")
        count = lengths.pop() if lengths else 0
        outs = []
        cur = env
        for i in range(count):
            it_env = cur
            for name, items in lists.items():
                it_env = it_env.bind(name, items[i], (Message(role, stringify(items[i])),))
            out = self._iteration(it_env, body.body, scope, path, i)
            outs.append(out)
            cur = out.env.with_context(cur.context + out.contribution)
        return self._join(body.join, role, env, outs)


def _trace_kind(block: Block) -> str:
    return block.body.keyword


def _stderr_prompt(message: str) -> None:
    sys.stderr.write(message)
    sys.stderr.flush()


class PdlRunner(CodeRunner):
    """``lang: pdl``: parse the source as a PDL document and evaluate it with
    the enclosing interpreter's backends, starting from an empty context."""

    kind = "pdl"

    def __init__(self, interpreter: Interpreter):
        self.interpreter = interpreter

    def run(self, source, session):
        from .parser import load_source

        program = load_source(source)
        return run_top_level(self.interpreter, Env(), program).display_value


# ---------------------------------------------------------------------------
# Top level
# ---------------------------------------------------------------------------


@dataclass
class TopLevelResult:
    value: Any
    context: tuple
    env: Env
    outcome: EvalOutcome
    is_list: bool = False
    warnings: list = field(default_factory=list)

    @property
    def display_value(self):
        """Value shown to users: a top-level list of blocks behaves like ``lastOf``."""
        if self.is_list:
            return self.value[-1] if self.value else ""
        return self.value


def final_context(env: Env, contribution: tuple) -> tuple:
    """The environment's context followed by the contributed messages that have
    not already been threaded into it."""
    seen = {id(m) for m in env.context}
    return env.context + tuple(m for m in contribution if id(m) not in seen)


def run_top_level(interp: Interpreter, env: Env, program: Program, base_dir=".") -> TopLevelResult:
    out = interp.eval_program(env, program, Scope(None, Path(base_dir)))
    return TopLevelResult(
        out.value,
        final_context(out.env, out.contribution),
        out.env,
        out,
        isinstance(program, BlockList),
        interp.warnings.items,
    )


def initial_env(data: dict | None = None, context: Iterable[Message] = ()) -> Env:
    env = Env(context=tuple(context))
    for k, v in (data or {}).items():
        env = env.bind(k, v, (Message("user", stringify(v)),))
    return env


def evaluate(
    document: str | Program,
    context: Iterable[Message] = (),
    backends: BackendRegistry | None = None,
    *,
    data: dict | None = None,
    base_dir=".",
    **kwargs,
) -> TopLevelResult:
    """Library entry point: evaluate PDL source text (or a parsed program)."""
    from .parser import load_source

    program = load_source(document, base_dir) if isinstance(document, str) else document
    interp = Interpreter(backends=backends, **kwargs)
    return run_top_level(interp, initial_env(data, context), program, base_dir)
