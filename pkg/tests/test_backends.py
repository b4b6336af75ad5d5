import json
import os
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from pdl.ast import Message
from pdl.backends import (
    BackendRegistry,
    CommandRunner,
    ConstantBackend,
    EchoBackend,
    ExprRunner,
    ModelRequest,
    OpenAIBackend,
    ScriptedBackend,
    Session,
    default_runners,
    flatten_chat,
    run_code,
)
from pdl.errors import BackendError, CodeError
from pdl.evaluator import evaluate

from conftest import FIXTURES


def req(*contents, **parameters):
    return ModelRequest("m", tuple(Message("user", c) for c in contents), parameters)


# -- model backends --------------------------------------------------------------


def test_echo_reverses_last_user_message():
    assert EchoBackend().generate(req("zz", "ab")) == "ba"


def test_scripted_replays_chatbot_answers():
    answers = json.loads((FIXTURES / "chatbot_answers.json").read_text())
    backend = ScriptedBackend(answers)
    assert backend.generate(req("q1")).startswith("A language salad is")
    assert backend.generate(req("q2")).startswith("In a world where many tongues")
    with pytest.raises(BackendError, match="exhausted"):
        backend.generate(req("q3"))
    assert len(backend.requests) == 3


@pytest.mark.parametrize("make", [lambda: EchoBackend(), lambda: ConstantBackend("a\n\nb" * 5)])
def test_stream_and_complete_agree(make):
    for params in ({}, {"stop": ["\n\n"]}, {"stop": "b"}):
        r = req("hello world, hello\n\nagain", **params)
        chunks = []
        streamed = make().generate(r, chunks.append)
        assert streamed == "".join(chunks) == make().generate(r)


def test_stop_sequence_split_across_chunks():
    backend = ConstantBackend("abc<STOP>def")  # chunked 7 characters at a time
    chunks = []
    assert backend.generate(req(stop=["<STOP>"]), chunks.append) == "abc"
    assert "".join(chunks) == "abc"


def test_registry_prefix_routing():
    echo, const = EchoBackend(), ConstantBackend("c")
    reg = BackendRegistry({"echo": echo}, default=const)
    assert reg.resolve("echo:x") is echo
    assert reg.resolve("granite") is const
    assert reg.resolve("other:y") is const
    with pytest.raises(BackendError):
        BackendRegistry().resolve("m")


def test_scripted_is_pure_in_queue_position():
    script = ["x", "y"]
    a, b = ScriptedBackend(script), ScriptedBackend(script)
    assert [a.generate(req("p")), a.generate(req("q"))] == [b.generate(req("p")), b.generate(req("q"))]


# -- HTTP backend ----------------------------------------------------------------


class _Stub(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, dict(self.headers), body))
        if body.get("model") == "broken":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        if body.get("stream"):
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.end_headers()
            for piece in ["stub ", "content", "\n\nignored"]:
                chunk = {"choices": [{"delta": {"content": piece}}]}
                self.wfile.write(f"data: {json.dumps(chunk)}\n\n".encode())
            self.wfile.write(b"data: [DONE]\n\n")
            return
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": "stub content"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _Stub.seen = []
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1", _Stub.seen
    server.shutdown()
    server.server_close()


def test_openai_backend_complete(stub_server):
    base, seen = stub_server
    backend = OpenAIBackend(base_url=base, api_key="k")
    request = ModelRequest("openai:gpt-x", (Message("system", "s"), Message("user", "u")),
                           {"temperature": 0, "max_tokens": 5, "stop": ["\n\n"]})
    assert backend.generate(request) == "stub content"
    path, headers, body = seen[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer k"
    assert body == {
        "model": "gpt-x",
        "messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}],
        "temperature": 0,
        "max_tokens": 5,
        "stop": ["\n\n"],
    }


def test_openai_backend_stream(stub_server):
    base, seen = stub_server
    chunks = []
    out = OpenAIBackend(base_url=base).generate(req("u", stop=["\n\n"]), chunks.append)
    assert out == "stub content" == "".join(chunks)
    assert seen[0][2]["stream"] is True


def test_openai_backend_http_error(stub_server):
    base, _ = stub_server
    with pytest.raises(BackendError, match="500"):
        OpenAIBackend(base_url=base).generate(ModelRequest("broken", (Message("user", "u"),)))


def test_openai_backend_env_configuration(stub_server, monkeypatch):
    base, seen = stub_server
    monkeypatch.setenv("PDL_API_BASE", base)
    monkeypatch.setenv("PDL_API_KEY", "from-env")
    assert OpenAIBackend().generate(req("u")) == "stub content"
    assert seen[0][1]["Authorization"] == "Bearer from-env"


def test_openai_backend_transport_failure():
    with pytest.raises(BackendError, match="transport"):
        OpenAIBackend(base_url="http://127.0.0.1:9", timeout=2).generate(req("u"))


def test_openai_backend_from_program(stub_server):
    base, _ = stub_server
    reg = BackendRegistry({"openai": OpenAIBackend(base_url=base)})
    assert evaluate("[hi, {model: 'openai:any'}]", backends=reg).value == ["hi", "stub content"]


# -- code runners ----------------------------------------------------------------


def test_expr_runner():
    assert run_code(default_runners(), "expr", "1+2", Session()) == 3


def test_expr_runner_has_no_variables():
    with pytest.raises(CodeError):
        ExprRunner().run("${ HOME }", Session())


def test_python_without_configuration_errors():
    with pytest.raises(CodeError, match="python"):
        run_code(default_runners(), "python", "print(1)", Session())


def test_unknown_lang():
    with pytest.raises(CodeError, match="no code runner"):
        run_code(default_runners(), "cobol", "", Session())


def py(code: str) -> CommandRunner:
    return CommandRunner([sys.executable, "-c", code])


def test_command_runner_json_passthrough():
    assert py('print(\'{"ok":true}\')').run("", Session()) == {"ok": True}


def test_command_runner_raw_string_fallback():
    assert py("print('hello'); print('world')").run("", Session()) == "hello\nworld"


def test_command_runner_receives_source_on_stdin():
    assert py("import sys; print(sys.stdin.read().upper())").run("abc", Session()) == "ABC"


def test_command_runner_nonzero_exit_keeps_stderr():
    with pytest.raises(CodeError, match="status 3[\\s\\S]*oops"):
        py("import sys; sys.stderr.write('oops'); sys.exit(3)").run("", Session())


def test_command_runner_timeout():
    with pytest.raises(CodeError, match="timed out"):
        CommandRunner([sys.executable, "-c", "import time; time.sleep(5)"], timeout=0.3).run("", Session())


def test_session_state_shared_between_code_blocks():
    runner = CommandRunner([sys.executable, str(FIXTURES / "rag_stub.py")])
    session = Session()
    assert runner.run("init mbpp train", session) == "initialized"
    got = runner.run("retrieve 2 anything", session)
    assert len(got["trainQ"]) == 2 and len(got["trainA"]) == 2
    with pytest.raises(CodeError, match="retrieve before init"):
        runner.run("retrieve 2 anything", Session())


def test_sandbox_strips_environment(monkeypatch):
    monkeypatch.setenv("PDL_SECRET_PROBE", "leak")
    code = "import os, json; print(json.dumps([os.environ.get('PDL_SECRET_PROBE'), os.getcwd()]))"
    open_env = CommandRunner([sys.executable, "-c", code]).run("", Session())
    boxed = CommandRunner([sys.executable, "-c", code], sandbox=True).run("", Session())
    assert open_env[0] == "leak" and boxed[0] is None
    assert boxed[1] != os.getcwd()


def test_unparseable_session_state():
    with pytest.raises(CodeError, match="session state"):
        py("import os; open(os.environ['PDL_SESSION_FILE'], 'w').write('{')").run("", Session())


# -- chat templates --------------------------------------------------------------


def test_flatten_chat():
    assert flatten_chat([Message("user", "hi")]) == "user: hi\n"
    assert flatten_chat([]) == ""
    assert flatten_chat([Message("system", "s"), Message("user", "u")]) == "system: s\nuser: u\n"
    assert flatten_chat([Message("user", "u")], "<{role}>{content}") == "<user>u"
