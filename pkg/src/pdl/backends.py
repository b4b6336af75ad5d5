"""Model backends and code runners.

Model backends are selected by model-id prefix (``"echo:"``, ``"scripted:"``,
``"openai:"``...); an unprefixed id goes to the registry's default backend.
Code runners are selected by the ``lang:`` of a code block.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

from .ast import Message, flatten
from .errors import BackendError, CodeError

ChunkCallback = Callable[[str], None]


@dataclass(frozen=True)
class ModelRequest:
    model_id: str
    messages: tuple
    parameters: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "model": self.model_id,
            "messages": [m.to_json() for m in self.messages],
            "parameters": self.parameters,
        }


def stop_sequences(parameters: dict | None) -> list[str]:
    stop = (parameters or {}).get("stop")
    if stop is None:
        return []
    if isinstance(stop, str):
        return [stop] if stop else []
    return [s for s in stop if isinstance(s, str) and s]


def truncate_at_stop(text: str, stops: list[str]) -> str:
    cut = len(text)
    for s in stops:
        i = text.find(s)
        if i != -1:
            cut = min(cut, i)
    return text[:cut]


def _filter_stream(chunks: Iterable[str], stops: list[str]) -> Iterator[str]:
    """Re-chunk a stream so that it ends right before the first stop sequence."""
    if not stops:
        yield from chunks
        return
    hold = max(len(s) for s in stops) - 1
    buf = ""
    for chunk in chunks:
        buf += chunk
        cut = truncate_at_stop(buf, stops)
        if len(cut) < len(buf):
            if cut:
                yield cut
            return
        safe = len(buf) - hold
        if safe > 0:
            yield buf[:safe]
            buf = buf[safe:]
    if buf:
        yield buf


class ModelBackend:
    """Subclasses implement :meth:`complete`, and optionally :meth:`stream`."""

    def complete(self, request: ModelRequest) -> str:
        return "".join(self.stream(request))

    def stream(self, request: ModelRequest) -> Iterator[str]:
        yield self.complete(request)

    def generate(self, request: ModelRequest, on_chunk: ChunkCallback | None = None) -> str:
        stops = stop_sequences(request.parameters)
        if on_chunk is None:
            return truncate_at_stop(self.complete(request), stops)
        parts = []
        for chunk in _filter_stream(self.stream(request), stops):
            parts.append(chunk)
            on_chunk(chunk)
        return "".join(parts)


def _chunks(text: str, size: int = 7) -> Iterator[str]:
    for i in range(0, len(text), size):
        yield text[i : i + size]


class ConstantBackend(ModelBackend):
    def __init__(self, text: str = "ok"):
        self.text = text

    def complete(self, request):
        return self.text

    def stream(self, request):
        return _chunks(self.text)


class EchoBackend(ModelBackend):
    """Returns the last user message reversed."""

    def complete(self, request):
        for m in reversed(request.messages):
            if m.role == "user":
                return m.content[::-1]
        return ""

    def stream(self, request):
        return _chunks(self.complete(request))


class ScriptedBackend(ModelBackend):
    """Replays a fixed queue of responses and records every request."""

    def __init__(self, responses: Iterable[str]):
        self.responses = list(responses)
        self.position = 0
        self.requests: list[ModelRequest] = []

    def _next(self, request) -> str:
        self.requests.append(request)
        if self.position >= len(self.responses):
            raise BackendError(f"scripted backend exhausted after {len(self.responses)} responses")
        text = self.responses[self.position]
        self.position += 1
        return text

    def complete(self, request):
        return self._next(request)

    def stream(self, request):
        return _chunks(self._next(request))


class FunctionBackend(ModelBackend):
    """``fn(model_id, flattened_prompt) -> str``; used for differential testing."""

    def __init__(self, fn: Callable[[str, str], str]):
        self.fn = fn

    def complete(self, request):
        return self.fn(request.model_id, flatten(request.messages))


class OpenAIBackend(ModelBackend):
    """Chat-completions wire format over HTTP."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 prefix: str = "openai:", timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get("PDL_API_BASE") or "").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("PDL_API_KEY")
        self.prefix = prefix
        self.timeout = timeout

    def _payload(self, request: ModelRequest, stream: bool) -> dict:
        model = request.model_id
        if self.prefix and model.startswith(self.prefix):
            model = model[len(self.prefix):]
        body = {"model": model, "messages": [m.to_json() for m in request.messages]}
        body.update(request.parameters or {})
        if stream:
            body["stream"] = True
        return body

    def _post(self, request: ModelRequest, stream: bool):
        import requests

        if not self.base_url:
            raise BackendError("no API base URL configured (set PDL_API_BASE)")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                headers=headers,
                json=self._payload(request, stream),
                stream=stream,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendError(f"model {request.model_id}: transport failure: {exc}") from None
        if not 200 <= resp.status_code < 300:
            raise BackendError(f"model {request.model_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp

    def complete(self, request):
        resp = self._post(request, stream=False)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"model {request.model_id}: malformed response: {exc!r}") from None
        return content or ""

    def stream(self, request):
        resp = self._post(request, stream=True)
        with resp:
            for raw in resp.iter_lines(decode_unicode=True):
                if not raw or not raw.startswith("data:"):
                    continue
                payload = raw[len("data:"):].strip()
                if payload == "[DONE]":
                    break
                try:
                    delta = json.loads(payload)["choices"][0].get("delta", {})
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"model {request.model_id}: malformed stream chunk: {exc!r}") from None
                if delta.get("content"):
                    yield delta["content"]


class BackendRegistry:
    def __init__(self, backends: dict[str, ModelBackend] | None = None, default: ModelBackend | None = None):
        self.backends = dict(backends or {})
        self.default = default

    def register(self, prefix: str, backend: ModelBackend, default: bool = False) -> None:
        self.backends[prefix] = backend
        if default:
            self.default = backend

    def resolve(self, model_id: str) -> ModelBackend:
        head, sep, _ = model_id.partition(":")
        if sep and head in self.backends:
            return self.backends[head]
        if self.default is not None:
            return self.default
        raise BackendError(f"no backend configured for model {model_id!r}")


def generate(backend: ModelBackend, req: ModelRequest, on_chunk: ChunkCallback | None = None) -> str:
    return backend.generate(req, on_chunk)


DEFAULT_CHAT_TEMPLATE = "{role}: {content}\n"


def flatten_chat(messages: Iterable[Message], template: str = DEFAULT_CHAT_TEMPLATE) -> str:
    return "".join(template.format(role=m.role, content=m.content) for m in messages)


# ---------------------------------------------------------------------------
# Code runners
# ---------------------------------------------------------------------------


@dataclass
class Session:
    """Per-evaluation state shared by code blocks, keyed by runner kind."""

    store: dict = field(default_factory=dict)


class CodeRunner:
    kind = "runner"

    def run(self, source: str, session: Session) -> Any:
        raise NotImplementedError


class ExprRunner(CodeRunner):
    """Evaluates the source as a template expression with no variables in scope."""

    kind = "expr"

    def run(self, source, session):
        from .errors import PDLError, UndefinedVariable
        from .expr import compile_expression

        def no_vars(name):
            raise UndefinedVariable(name)

        try:
            return compile_expression(source.strip())(no_vars)
        except PDLError as exc:
            raise CodeError(f"expr runner: {exc.message}") from None


class FunctionRunner(CodeRunner):
    kind = "function"

    def __init__(self, fn: Callable[[str], Any]):
        self.fn = fn

    def run(self, source, session):
        return self.fn(source)


def _parse_output(stdout: str):
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if lines:
        try:
            return json.loads(lines[-1])
        except ValueError:
            pass
    return stdout[:-1] if stdout.endswith("\n") else stdout


class CommandRunner(CodeRunner):
    """Runs an external interpreter with the source on stdin.

    The last non-blank stdout line is parsed as JSON (the whole output is
    returned as a string otherwise).  Session state travels through the JSON
    file named by ``PDL_SESSION_FILE``.
    """

    kind = "command"

    def __init__(self, argv: list[str], timeout: float = 30.0, sandbox: bool = False):
        self.argv = list(argv)
        self.timeout = timeout
        self.sandbox = sandbox

    def run(self, source, session):
        state = session.store.get(self.kind, {})
        with tempfile.TemporaryDirectory(prefix="pdl-") as tmp:
            state_file = os.path.join(tmp, "session.json")
            with open(state_file, "w", encoding="utf-8") as fh:
                json.dump(state, fh)
            env = {} if self.sandbox else dict(os.environ)
            if self.sandbox:
                env["PATH"] = os.environ.get("PATH", "/usr/bin:/bin")
            env["PDL_SESSION_FILE"] = state_file
            try:
                proc = subprocess.run(
                    self.argv,
                    input=source,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                    env=env,
                    cwd=tmp if self.sandbox else None,
                )
            except subprocess.TimeoutExpired:
                raise CodeError(f"code runner timed out after {self.timeout} s") from None
            except OSError as exc:
                raise CodeError(f"cannot start code runner {self.argv[0]!r}: {exc}") from None
            if proc.returncode != 0:
                raise CodeError(f"code runner exited with status {proc.returncode}", proc.stderr)
            try:
                with open(state_file, encoding="utf-8") as fh:
                    session.store[self.kind] = json.load(fh)
            except ValueError as exc:
                raise CodeError(f"unparseable session state: {exc}") from None
        return _parse_output(proc.stdout)


class MissingRunner(CodeRunner):
    def __init__(self, lang: str):
        self.lang = lang

    def run(self, source, session):
        raise CodeError(f"no code runner configured for language {self.lang!r}")


def default_runners() -> dict[str, CodeRunner]:
    return {"expr": ExprRunner(), "python": MissingRunner("python")}


def run_code(runners: dict[str, CodeRunner], lang: str, source: str, session: Session):
    runner = runners.get(lang)
    if runner is None:
        raise CodeError(f"no code runner for language {lang!r}")
    return runner.run(source, session)
