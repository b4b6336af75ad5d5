"""Reference semantics for the string-only fragment, used as a test oracle.

This is a direct structural recursion over the inference rules with its own
environment type (a dict ``name -> (value, string)`` whose ``context`` entry
holds ``(ctx, ctx)``) and its own stringification.  It shares only the AST
and the expression evaluator with :mod:`pdl.evaluator`.

Beyond the printed rules the oracle fixes a few corners that the rules leave
open, identically to the evaluator: ``lastOf`` over a list yields its last
value, an ``if`` without ``else`` yields ``("", "")``, excluding ``result``
from ``contribute`` yields the value ``""``, and a model without ``input``
uses the context as its prompt.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .ast import (
    Block,
    BlockList,
    Call,
    Closure,
    Code,
    Contribute,
    Data,
    Env,
    ExprLeaf,
    Function,
    Get,
    If,
    LastOf,
    Message,
    Model,
    Program,
    Repeat,
    RepeatUntil,
)
from .expr import Literal, compile_template, expand_data

CONTEXT = "context"

RULES = (
    "string",
    "block-contribute-tt",
    "block-contribute-ff",
    "defs-empty",
    "defs-cons",
    "array-empty",
    "array-singleton",
    "array-cons",
    "model",
    "code",
    "get",
    "data",
    "lastOf",
    "if-tt",
    "if-ff",
    "repeat-more",
    "repeat-last",
    "until-continue",
    "until-stop",
    "function",
    "call",
)


class RefError(Exception):
    """Evaluation error inside the fragment (undefined name, bad call, ...)."""


class Unsupported(Exception):
    """The program lies outside the fragment the oracle covers."""


@dataclass(frozen=True, eq=False)
class RefClosure:
    params: tuple
    body: Program
    env: dict


def _str(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else json.dumps(v)
    if isinstance(v, (list, dict)):
        try:
            return json.dumps(v, ensure_ascii=False)
        except TypeError:
            raise RefError("unserializable value") from None
    raise RefError("unserializable value")


def _truth(v) -> bool:
    if v is None or v is False:
        return False
    if v is True:
        return True
    if isinstance(v, (int, float)):
        return v != 0
    if isinstance(v, (str, list, dict)):
        return bool(v)
    return True


def ref_env(bindings: dict | None = None, context: str = "") -> dict:
    env = {k: (v, _str(v)) for k, v in (bindings or {}).items()}
    env[CONTEXT] = (context, context)
    return env


def _lookup(env: dict):
    def lookup(name):
        if name not in env:
            raise RefError(f"undefined variable {name!r}")
        return env[name][0]

    return lookup


def _eval_e(env: dict, e):
    try:
        return compile_template(e).evaluate(_lookup(env))
    except RefError:
        raise
    except Exception as exc:
        raise RefError(str(exc)) from None


def _with_ctx(env: dict, ctx: str) -> dict:
    new = dict(env)
    new[CONTEXT] = (ctx, ctx)
    return new


def _bind(env: dict, x: str, v, s: str) -> dict:
    new = dict(env)
    new[x] = (v, s)
    return new


class RefSemantics:
    def __init__(
        self,
        model_fn: Callable[[str, str], str] | None = None,
        code_fn: Callable[[str, str], Any] | None = None,
        until_polarity: str = "appendix",
        max_iterations: int = 1_000_000,
    ):
        self.model_fn = model_fn
        self.code_fn = code_fn
        self.until_polarity = until_polarity
        self.max_iterations = max_iterations
        self.fired: list[str] = []

    def _rule(self, name: str) -> None:
        self.fired.append(name)

    # <S, p> => <S', v, s>
    def program(self, env: dict, p: Program):
        if isinstance(p, BlockList):
            return self._list(env, list(p.blocks))
        return self.block(env, p)

    def _list(self, env: dict, blocks: list):
        if not blocks:
            self._rule("array-empty")
            return env, [], ""
        if len(blocks) == 1:
            self._rule("array-singleton")
            env1, v, s = self.program(env, blocks[0])
            return env1, [v], s
        self._rule("array-cons")
        env1, v1, s1 = self.program(env, blocks[0])
        ctx = env[CONTEXT][0] + s1
        env2, vs, s = self._list(_with_ctx(env1, ctx), blocks[1:])
        return env2, [v1] + vs, s1 + s

    def block(self, env: dict, b: Block):
        if b.role is not None or b.parser is not None or b.spec is not None:
            raise Unsupported("role/parser/spec are outside the fragment")
        bare = not b.has_keywords()
        if bare and isinstance(b.body, ExprLeaf):
            self._rule("string")
            v = _eval_e(env, b.body.expr)
            return env, v, _str(v)
        return self._defs(env, list(b.defs.items()), b)

    def _defs(self, env: dict, defs: list, b: Block):
        if defs:
            self._rule("defs-cons")
            (x, bx), rest = defs[0], defs[1:]
            _, vx, sx = self.program(env, bx)
            return self._defs(_bind(env, x, vx, sx), rest, b)
        self._rule("defs-empty")
        return self._contribute(env, b)

    def _contribute(self, env: dict, b: Block):
        c: Contribute = b.contribute
        env1, v, s = self.body(env, b.body)
        if b.def_ is not None:
            env1 = _bind(env1, b.def_, v, s)
        if c.context:
            self._rule("block-contribute-tt")
        else:
            self._rule("block-contribute-ff")
            s = ""
        if not c.result:
            v = ""
        return env1, v, s

    # <S, b> =>bb <S', v, s>
    def body(self, env: dict, b):
        if isinstance(b, ExprLeaf):
            self._rule("string")
            v = _eval_e(env, b.expr)
            return env, v, _str(v)
        if isinstance(b, Model):
            self._rule("model")
            m = _eval_e(env, b.model)
            if not isinstance(m, str):
                raise RefError("model id must be a string")
            if b.input is not None:
                _, _, prompt = self.program(env, b.input)
            else:
                prompt = env[CONTEXT][1]
            if self.model_fn is None:
                raise Unsupported("no model function injected")
            v = self.model_fn(m, prompt)
            return env, v, _str(v)
        if isinstance(b, Code):
            self._rule("code")
            _, _, source = self.program(env, b.source)
            if self.code_fn is None:
                raise Unsupported("no code function injected")
            v = self.code_fn(b.lang, source)
            return env, v, _str(v)
        if isinstance(b, Get):
            self._rule("get")
            if b.name not in env:
                raise RefError(f"undefined variable {b.name!r}")
            v, s = env[b.name]
            return env, v, s
        if isinstance(b, Data):
            self._rule("data")
            if b.raw:
                v = json.loads(json.dumps(b.value))
            else:
                try:
                    v = expand_data(_lookup(env), b.value)
                except RefError:
                    raise
                except Exception as exc:
                    raise RefError(str(exc)) from None
            return env, v, _str(v)
        if isinstance(b, LastOf):
            self._rule("lastOf")
            env1, v, s = self.program(env, b.program)
            if isinstance(b.program, BlockList):
                v = v[-1] if v else ""
            return env1, v, s
        if isinstance(b, If):
            if _truth(_eval_e(env, b.cond)):
                self._rule("if-tt")
                return self.program(env, b.then)
            self._rule("if-ff")
            if b.else_ is None:
                return env, "", ""
            return self.program(env, b.else_)
        if isinstance(b, Repeat):
            if b.join.as_ != "lastOf":
                raise Unsupported("join other than lastOf")
            n = _eval_e(env, b.n)
            if isinstance(n, float) and n.is_integer():
                n = int(n)
            if not isinstance(n, int) or isinstance(n, bool):
                raise RefError("repeat count must be an integer")
            return self._repeat(env, b.body, n)
        if isinstance(b, RepeatUntil):
            if b.join.as_ != "lastOf":
                raise Unsupported("join other than lastOf")
            return self._until(env, b.body, b.until, 0)
        if isinstance(b, Function):
            self._rule("function")
            return env, RefClosure(tuple(b.params), b.returns, env), ""
        if isinstance(b, Call):
            self._rule("call")
            f = _eval_e(env, b.f)
            if not isinstance(f, RefClosure):
                raise RefError("call target is not a function")
            try:
                args = expand_data(_lookup(env), b.args or {})
            except RefError:
                raise
            except Exception as exc:
                raise RefError(str(exc)) from None
            if set(args) != set(f.params):
                raise RefError("argument mismatch")
            if b.pdl_context is not None:
                _, _, ctx = self.program(env, b.pdl_context)
            else:
                ctx = env[CONTEXT][0]
            callee = _with_ctx(f.env, ctx)
            for x in f.params:
                callee = _bind(callee, x, args[x], _str(args[x]))
            _, v, s = self.program(callee, f.body)
            return env, v, s
        raise Unsupported(f"{type(b).__name__} is outside the fragment")

    def _repeat(self, env: dict, doc: Program, n: int):
        # Iterative form of the two repeat rules (recursion depth stays flat).
        while n > 1:
            self._rule("repeat-more")
            env1, _, s1 = self.program(env, doc)
            env = _with_ctx(env1, env[CONTEXT][0] + s1)
            n -= 1
        self._rule("repeat-last")
        return self.program(env, doc)

    def _until(self, env: dict, doc: Program, cond, count: int):
        continue_on = self.until_polarity == "appendix"
        while True:
            if count >= self.max_iterations:
                raise RefError("iteration limit")
            env1, v1, s1 = self.program(env, doc)
            count += 1
            if _truth(_eval_e(env1, cond)) == continue_on:
                self._rule("until-continue")
                env = _with_ctx(env1, env[CONTEXT][0] + s1)
                continue
            self._rule("until-stop")
            return env1, v1, s1


def ref_eval_program(env: dict, p: Program, model_fn=None, code_fn=None, until_polarity="appendix"):
    return RefSemantics(model_fn, code_fn, until_polarity).program(env, p)


# ---------------------------------------------------------------------------
# Projections used for comparison
# ---------------------------------------------------------------------------


def canon(v, closure_identity: bool = True):
    """Type-tagged canonical form; closures compare by parameter list and body."""
    if isinstance(v, (Closure, RefClosure)):
        params = tuple(v.params)
        return ("closure", params, id(v.body)) if closure_identity else ("closure", params)
    if isinstance(v, bool):
        return ("bool", v)
    if isinstance(v, (int, float)):
        return ("num", v)
    if isinstance(v, str):
        return ("str", v)
    if v is None:
        return ("null",)
    if isinstance(v, list):
        return ("list", tuple(canon(x, closure_identity) for x in v))
    if isinstance(v, dict):
        return ("dict", tuple((k, canon(x, closure_identity)) for k, x in v.items()))
    return ("other", repr(v))


def project_env(env: Env, closure_identity: bool = True) -> dict:
    out = {k: (canon(b.value, closure_identity), "".join(m.content for m in b.contribution)) for k, b in env.items()}
    ctx = env.context_text()
    out[CONTEXT] = (canon(ctx), ctx)
    return out


def project_ref_env(env: dict, closure_identity: bool = True) -> dict:
    return {k: (canon(v, closure_identity), s) for k, (v, s) in env.items()}


# ---------------------------------------------------------------------------
# Random fragment programs
# ---------------------------------------------------------------------------

FRAGMENT_BINDINGS = {"a": "alpha", "b": "beta"}

_LEAVES = (
    "x", "hello ", "ab", "", "${a}", "${b}", "${a ~ b}", "${context|length}",
    "${1 + 1}", "[${a}]", "${[a, 1]}", "${b|upper}",
)
_RISKY_LEAVES = ("${x}", "${y}")
_CONDS = (
    "${true}", "${false}", "${a == \"alpha\"}", "${(context|length) > 4}",
    "${b}", "${\"\"}", "${a ~ b == \"alphabeta\"}",
)
_NAMES = ("x", "y", "f")


def fragment_model(model_id: str, prompt: str) -> str:
    return f"<{model_id}:{len(prompt)}:{prompt[-3:]}>"


def fragment_code(lang: str, source: str):
    return {"lang": lang, "len": len(source)} if len(source) % 2 else source.upper()


class _Gen:
    def __init__(self, seed: int, budget: int):
        self.rng = random.Random(seed)
        self.budget = budget

    def take(self) -> bool:
        if self.budget <= 0:
            return False
        self.budget -= 1
        return True

    def leaf(self, literal_only=False) -> Block:
        if literal_only:
            return Block(ExprLeaf(Literal(self.rng.choice(("x", "hello ", "ab")))))
        pool = _RISKY_LEAVES if self.rng.random() < 0.1 else _LEAVES
        return Block(ExprLeaf(compile_template(self.rng.choice(pool))))

    def keywords(self, block: Block, depth: int) -> Block:
        r = self.rng
        kw = {}
        if r.random() < 0.3:
            kw["def_"] = r.choice(("x", "y"))
        if r.random() < 0.2:
            kw["contribute"] = Contribute(result=r.random() < 0.5, context=r.random() < 0.5)
        if r.random() < 0.15 and self.budget > 0:
            names = r.sample(("x", "y"), r.randint(1, 2))
            kw["defs"] = {n: self.program(depth + 1, 0) for n in names}
        if not kw:
            return block
        return Block(block.body, **kw)

    def program(self, depth: int, loops: int) -> Program:
        r = self.rng
        if depth < 4 and self.budget > 2 and r.random() < 0.5:
            n = r.choice((0, 1, 2, 2, 3, 3, 4))
            return BlockList(tuple(self.block(depth + 1, loops) for _ in range(n)))
        return self.block(depth + 1, loops)

    def block(self, depth: int, loops: int) -> Block:
        r = self.rng
        if not self.take() or depth > 5:
            return self.leaf()
        choice = r.choices(
            ("leaf", "data", "get", "lastOf", "if", "repeat", "until", "func", "call", "model", "code"),
            weights=(6, 2, 2, 6, 4, 4, 2, 4, 1, 2, 2),
        )[0]
        if choice in ("repeat", "until") and loops >= 2:
            choice = "lastOf"
        if choice == "leaf":
            body = self.leaf().body
        elif choice == "data":
            value = r.choice(({"k": "${a}", "n": [1, "${b}"]}, ["${1 + 2}", True, None], "${[a, b]}"))
            body = Data(value, raw=r.random() < 0.3)
        elif choice == "get":
            body = Get(r.choice(("a", "b", "context", "a", "x", "y", "f")))
        elif choice == "lastOf":
            n = r.randint(0, 4)
            body = LastOf(BlockList(tuple(self.block(depth + 1, loops) for _ in range(n))))
        elif choice == "if":
            other = self.program_body(depth, loops) if r.random() < 0.6 else None
            body = If(compile_template(r.choice(_CONDS)), self.program_body(depth, loops), other)
        elif choice == "repeat":
            body = Repeat(self.program_body(depth, loops + 1), Literal(r.randint(-1, 4)))
        elif choice == "until":
            k = r.randint(1, 12)
            inner = BlockList((self.leaf(literal_only=True), self.block(depth + 1, loops + 1)))
            cond = compile_template("${ (context|length) < %d }" % k)
            body = RepeatUntil(Block(LastOf(inner)), cond)
        elif choice == "func":
            params = {"p": None} if r.random() < 0.8 else {}
            ret = Block(ExprLeaf(compile_template(r.choice(("${p}!", "${a}", "${context|length}", "q")))))
            if r.random() < 0.3:
                ret = Block(LastOf(BlockList((ret, Block(ret.body, def_="g")))))
            fun = Block(Function(params, ret), def_="f")
            args = {"p": r.choice(("${a}", "lit", "${[1, 2]}"))} if params else {}
            call = Block(Call(compile_template("${f}"), args))
            return self.keywords(Block(LastOf(BlockList((fun, call)))), depth)
        elif choice == "call":
            ctx = BlockList(()) if r.random() < 0.2 else None
            body = Call(compile_template("${f}"), {"p": "${b}"}, ctx)
        elif choice == "model":
            inp = self.program(depth + 1, loops) if r.random() < 0.4 else None
            body = Model(Literal("m"), inp)
        else:
            body = Code(self.program(depth + 1, loops), "f")
        return self.keywords(Block(body), depth)

    def program_body(self, depth, loops) -> Block:
        p = self.program(depth + 1, loops)
        return Block(LastOf(p)) if isinstance(p, BlockList) else p


def gen_fragment_programs(seed: int, size_budget: int) -> Program:
    """Deterministic random program in the fragment, at most ``size_budget``
    structured nodes (literal leaves filling the remaining slots)."""
    if size_budget < 1:
        raise ValueError("size_budget must be at least 1")
    g = _Gen(seed, size_budget)
    if size_budget == 1:
        return g.leaf(literal_only=True)
    while True:
        p = g.program(0, 0)
        if count_nodes(p) <= size_budget:
            return p
        g.budget = size_budget


def count_nodes(p: Program) -> int:
    if isinstance(p, BlockList):
        return sum(count_nodes(b) for b in p.blocks)
    n = 1 + sum(count_nodes(v) for v in p.defs.values())
    b = p.body
    for attr in ("program", "input", "then", "else_", "body", "returns", "source", "pdl_context"):
        sub = getattr(b, attr, None)
        if isinstance(sub, (Block, BlockList)):
            n += count_nodes(sub)
    return n


# ---------------------------------------------------------------------------
# Differential comparison
# ---------------------------------------------------------------------------


@dataclass
class Comparison:
    agree: bool
    eval_result: Any = None
    ref_result: Any = None
    detail: str = ""


def _run_eval(program: Program, bindings: dict, polarity: str, model_fn, code_fn):
    from .backends import BackendRegistry, FunctionBackend, FunctionRunner
    from .evaluator import Config, Interpreter, initial_env

    interp = Interpreter(
        backends=BackendRegistry(default=FunctionBackend(model_fn)),
        runners={"f": FunctionRunner(lambda src: code_fn("f", src))},
        config=Config(until_polarity=polarity),
        on_prompt=lambda m: None,
    )
    return interp.eval_program(initial_env(bindings), program)


def compare(program: Program, bindings: dict | None = None, polarity: str = "appendix",
            model_fn=fragment_model, code_fn=fragment_code) -> Comparison:
    """Run both semantics; agreement means equal projected triples or both failing."""
    from .errors import PDLError

    bindings = FRAGMENT_BINDINGS if bindings is None else bindings
    try:
        out = _run_eval(program, bindings, polarity, model_fn, code_fn)
        mine = (project_env(out.env), canon(out.value), "".join(m.content for m in out.contribution))
    except PDLError as exc:
        mine = ("error", str(exc))
    try:
        renv, rv, rs = RefSemantics(model_fn, code_fn, polarity).program(ref_env(bindings), program)
        ref = (project_ref_env(renv), canon(rv), rs)
    except RefError as exc:
        ref = ("error", str(exc))
    if mine[0] == "error" or ref[0] == "error":
        ok = mine[0] == ref[0] == "error"
        return Comparison(ok, mine, ref, "" if ok else "only one side failed")
    ok = mine == ref
    return Comparison(ok, mine, ref, "" if ok else "triples differ")


def fuzz(count: int, budget: int = 40, seed0: int = 0) -> list[tuple[int, Comparison]]:
    """Disagreements among ``count`` generated programs."""
    bad = []
    for seed in range(seed0, seed0 + count):
        c = compare(gen_fragment_programs(seed, budget))
        if not c.agree:
            bad.append((seed, c))
    return bad


# ---------------------------------------------------------------------------
# Conformance: one golden case per rule, expected triples computed by hand
# ---------------------------------------------------------------------------


def _upper(model_id: str, prompt: str) -> str:
    return prompt.upper()


def _length(lang: str, source: str):
    return len(source)


CLOSURE_P = ("closure", ("p",))


@dataclass
class GoldenCase:
    rule: str
    source: str
    value: Any
    string: str
    bindings: dict = field(default_factory=dict)  # name -> (value, string); checked as a subset
    unbound: tuple = ()


CONFORMANCE_CASES = (
    GoldenCase("string", '"s"', "s", "s"),
    GoldenCase("block-contribute-tt", "{expr: hi, def: x}", "hi", "hi", {"x": ("hi", "hi")}),
    GoldenCase("block-contribute-ff", "{expr: hi, def: x, contribute: [result]}", "hi", "", {"x": ("hi", "hi")}),
    GoldenCase("defs-empty", "{defs: {}, def: x, expr: hi}", "hi", "hi", {"x": ("hi", "hi")}),
    GoldenCase(
        "defs-cons",
        '{defs: {x: one, y: "${x}!"}, expr: "${y}"}',
        "one!", "one!",
        {"x": ("one", "one"), "y": ("one!", "one!")},
    ),
    GoldenCase("array-empty", "[]", [], ""),
    GoldenCase("array-singleton", '["x"]', ["x"], "x"),
    GoldenCase("array-cons", '["a", "${context}"]', ["a", "a"], "aa", {"context": ("a", "a")}),
    GoldenCase("model", "{model: m, input: {expr: hello, def: z}}", "HELLO", "HELLO", unbound=("z",)),
    GoldenCase("code", "{lang: f, code: abc}", 3, "3"),
    GoldenCase("get", '{defs: {x: {lastOf: [ab, "${1}"]}}, get: x}', 1, "ab1", {"x": (1, "ab1")}),
    GoldenCase(
        "data",
        '{data: {k: "${a}", n: [1, 2]}}',
        {"k": "alpha", "n": [1, 2]},
        '{"k": "alpha", "n": [1, 2]}',
    ),
    GoldenCase("lastOf", "{lastOf: [a, b]}", "b", "ab", {"context": ("a", "a")}),
    GoldenCase("if-tt", "{if: \"${a == 'alpha'}\", then: yes, else: no}", "yes", "yes"),
    GoldenCase("if-ff", "{if: \"${a == 'beta'}\", then: yes, else: no}", "no", "no"),
    GoldenCase("repeat-more", '{repeat: "${context|length}", num_iterations: 3}', 2, "2", {"context": ("01", "01")}),
    GoldenCase("repeat-last", "{repeat: x, num_iterations: 1}", "x", "x"),
    GoldenCase("until-continue", '{repeat: u, until: "${(context|length) < 2}"}', "u", "u", {"context": ("uu", "uu")}),
    GoldenCase("until-stop", '{repeat: u, until: "${false}"}', "u", "u", {"context": ("", "")}),
    GoldenCase("function", '{function: {p: null}, return: "${p}!", def: f}', CLOSURE_P, "", {"f": (CLOSURE_P, "")}),
    GoldenCase(
        "call",
        '[{def: f, function: {p: null}, return: {expr: "${p}!", def: g}}, {call: "${f}", args: {p: "${a}"}}]',
        [CLOSURE_P, "alpha!"], "alpha!",
        unbound=("g", "p"),
    ),
)


def _expected_canon(v):
    if v == CLOSURE_P:
        return CLOSURE_P
    if isinstance(v, list):
        return ("list", tuple(_expected_canon(x) for x in v))
    return canon(v, closure_identity=False)


@dataclass
class CaseResult:
    case: GoldenCase
    eval_ok: bool
    ref_ok: bool
    fired: bool
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.eval_ok and self.ref_ok and self.fired


def _check_triple(case: GoldenCase, env_proj: dict, value, string: str) -> str:
    problems = []
    if canon(value, closure_identity=False) != _expected_canon(case.value):
        problems.append(f"value {value!r}")
    if string != case.string:
        problems.append(f"string {string!r}")
    for name, (v, s) in case.bindings.items():
        got = env_proj.get(name)
        if got is None or got != (_expected_canon(v), s):
            problems.append(f"binding {name} = {got!r}")
    for name in case.unbound:
        if name in env_proj:
            problems.append(f"{name} should be unbound")
    return "; ".join(problems)


def run_case(case: GoldenCase) -> CaseResult:
    from .parser import load_source

    program = load_source(case.source)
    detail = []
    try:
        out = _run_eval(program, FRAGMENT_BINDINGS, "appendix", _upper, _length)
        err = _check_triple(case, project_env(out.env, False), out.value,
                            "".join(m.content for m in out.contribution))
    except Exception as exc:  # reported, not raised
        err = f"raised {exc}"
    eval_ok = not err
    if err:
        detail.append("eval: " + err)
    sem = RefSemantics(_upper, _length, "appendix")
    try:
        renv, rv, rs = sem.program(ref_env(FRAGMENT_BINDINGS), program)
        err = _check_triple(case, project_ref_env(renv, False), rv, rs)
    except Exception as exc:
        err = f"raised {exc}"
    ref_ok = not err
    if err:
        detail.append("refsem: " + err)
    fired = case.rule in sem.fired
    if not fired:
        detail.append(f"rule {case.rule} did not fire")
    return CaseResult(case, eval_ok, ref_ok, fired, "; ".join(detail))


def run_conformance() -> tuple[list[CaseResult], float]:
    start = time.perf_counter()
    results = [run_case(c) for c in CONFORMANCE_CASES]
    return results, time.perf_counter() - start


def conformance_table(results: list[CaseResult]) -> str:
    width = max(len(r) for r in RULES)
    lines = [f"{'rule':<{width}}  eval  refsem  fired  result"]
    for rule in RULES:
        rs = [r for r in results if r.case.rule == rule]
        ok = bool(rs) and all(r.passed for r in rs)
        e = all(r.eval_ok for r in rs) and bool(rs)
        f = all(r.ref_ok for r in rs) and bool(rs)
        fi = all(r.fired for r in rs) and bool(rs)
        mark = lambda b: "ok" if b else "--"
        line = f"{rule:<{width}}  {mark(e):<4}  {mark(f):<6}  {mark(fi):<5}  {'PASS' if ok else 'FAIL'}"
        for r in rs:
            if r.detail:
                line += f"  ({r.detail})"
        lines.append(line)
    passed = sum(
        1 for rule in RULES
        if any(r.case.rule == rule for r in results)
        and all(r.passed for r in results if r.case.rule == rule)
    )
    lines.append(f"{passed}/{len(RULES)} rules conform")
    return "\n".join(lines)


__all__ = [
    "RULES", "RefError", "Unsupported", "RefClosure", "RefSemantics", "ref_env", "ref_eval_program",
    "canon", "project_env", "project_ref_env", "FRAGMENT_BINDINGS", "gen_fragment_programs",
    "count_nodes", "compare", "fuzz", "Comparison", "GoldenCase", "CONFORMANCE_CASES", "run_case",
    "run_conformance", "conformance_table", "Message",
]
