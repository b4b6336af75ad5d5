import json
import subprocess
import sys

import jsonschema
import pytest

from pdl.cli import ModelEcho, build_parser, cmd_run, parse_data_flag
from pdl.trace import PREVIEW_LIMIT, SCHEMA

from conftest import FIXTURES, pdl_cmd


def pdl(*args, stdin="", cwd=None):
    return subprocess.run(pdl_cmd(*args), input=stdin, capture_output=True, text=True, cwd=cwd, timeout=60)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


CHATBOT_ARGS = (
    "run", FIXTURES / "chatbot.pdl",
    "--backend", f"scripted={FIXTURES / 'chatbot_answers.json'}",
    "--stdin-script", FIXTURES / "chatbot_stdin.json",
)

# -- run ---------------------------------------------------------------------------


def test_run_hello(tmp_path):
    r = pdl("run", write(tmp_path, "hi.pdl", '"hi"\n'))
    assert (r.returncode, r.stdout, r.stderr) == (0, "hi\n", "")


def test_run_prints_json_for_structured_values(tmp_path):
    r = pdl("run", write(tmp_path, "d.pdl", "data: {a: [1, true]}\n"))
    assert r.stdout == '{"a": [1, true]}\n'


def test_chatbot_golden_stdout():
    r = pdl(*CHATBOT_ARGS)
    assert r.returncode == 0, r.stderr
    assert r.stdout == (FIXTURES / "chatbot_expected_stdout.txt").read_text()
    assert "What is your query?" in r.stderr and "What is your query?" not in r.stdout


def test_chatbot_reads_real_stdin():
    args = [a for a in CHATBOT_ARGS[:4]]
    r = pdl(*args, stdin="What's a language salad?\nSay it as a poem!\nquit\n")
    assert r.stdout == (FIXTURES / "chatbot_expected_stdout.txt").read_text()


def test_schema_error_exit_2_with_path(tmp_path):
    f = write(tmp_path, "bad.pdl", "text:\n- model: m\n  contribute: [nowhere]\n")
    r = pdl("run", f)
    assert r.returncode == 2
    assert f"{f}:3:" in r.stderr and "(at text[0].contribute[0])" in r.stderr


def test_eval_error_exit_1_with_position(tmp_path):
    f = write(tmp_path, "e.pdl", "text:\n- ok\n- ${ missing }\n")
    r = pdl("run", f)
    assert r.returncode == 1
    assert f"{f}:3:3: error: undefined variable 'missing' (at text[1])" in r.stderr


def test_missing_file_exit_2(tmp_path):
    assert pdl("run", tmp_path / "nope.pdl").returncode == 2


def test_json_diagnostics(tmp_path):
    r = pdl("run", write(tmp_path, "bad.pdl", "{text: a, bogus: 1}\n"), "--json")
    (d,) = json.loads(r.stderr)
    assert d["path"] == ["bogus"] and d["severity"] == "error" and d["line"] == 1


def test_data_and_context_flags(tmp_path):
    prog = write(tmp_path, "p.pdl", 'text: ["${ n + 1 } ${ who } ", "${ context }"]\n')
    ctx = write(tmp_path, "ctx.json", json.dumps([{"role": "system", "content": "S|"}]))
    r = pdl("run", prog, "--data", "n=41", "--data", "who=world", "--context", ctx)
    assert r.stdout == "42 world S|42 world \n"


def test_mock_and_echo_backends(tmp_path):
    prog = write(tmp_path, "m.pdl", "[abc, {model: 'echo:x'}, {model: plain}]\n")
    r = pdl("run", prog, "--backend", "mock=fixed")
    assert r.stdout == "cba\nfixed\nfixed\n"


def test_code_runner_flag(tmp_path):
    prog = write(tmp_path, "c.pdl", "lang: sh\ncode: 'ignored'\n")
    r = pdl("run", prog, "--code-runner", f"sh={sys.executable} -c \"print('[1, 2]')\"")
    assert r.stdout == "[1, 2]\n"


def test_until_polarity_and_iteration_cap(tmp_path):
    prog = write(tmp_path, "u.pdl", 'repeat: x\nuntil: "${ false }"\njoin: {as: array}\n')
    assert pdl("run", prog, "--until-polarity", "appendix").stdout == '["x"]\n'
    r = pdl("run", prog, "--max-iterations", "5")
    assert r.returncode == 1 and "5" in r.stderr


def test_warning_reported_on_stderr(tmp_path):
    r = pdl("run", write(tmp_path, "w.pdl", "repeat: x\nnum_iterations: 0\n"))
    assert r.returncode == 0 and "warning" in r.stderr


def test_sandbox_flag_hides_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PDL_PROBE", "visible")
    prog = write(tmp_path, "s.pdl", "lang: env\ncode: x\n")
    runner = f"env={sys.executable} -c \"import os, json; print(json.dumps(os.environ.get('PDL_PROBE')))\""
    assert pdl("run", prog, "--code-runner", runner).stdout == "visible\n"
    assert pdl("run", prog, "--code-runner", runner, "--sandbox").stdout == "null\n"


def test_bad_flag_values(tmp_path):
    prog = write(tmp_path, "p.pdl", '"x"\n')
    assert pdl("run", prog, "--data", "novalue").returncode == 2
    assert pdl("run", prog, "--backend", "warp").returncode == 2


# -- check / schema / conformance ----------------------------------------------------


def test_check_chatbot_ok():
    r = pdl("check", FIXTURES / "chatbot.pdl")
    assert (r.returncode, r.stderr) == (0, "")


def test_check_unknown_keyword(tmp_path):
    r = pdl("check", write(tmp_path, "k.pdl", "{modell: x}\n"))
    assert r.returncode == 2 and "modell" in r.stderr


def test_check_type_typo_suggests(tmp_path):
    r = pdl("check", write(tmp_path, "t.pdl", "{data: 1, spec: strr}\n"))
    assert r.returncode == 2 and "did you mean 'str'?" in r.stderr


def test_check_include_cycle(tmp_path):
    write(tmp_path, "a.pdl", "include: b.pdl\n")
    write(tmp_path, "b.pdl", "include: a.pdl\n")
    r = pdl("check", tmp_path / "a.pdl")
    assert r.returncode == 2 and "include cycle" in r.stderr


def test_schema_command():
    r = pdl("schema")
    schema = json.loads(r.stdout)
    assert r.returncode == 0 and "$schema" in schema


def test_conformance_command():
    r = pdl("conformance")
    assert r.returncode == 0
    assert r.stdout.splitlines()[-2].endswith("rules conform")


# -- output behaviour --------------------------------------------------------------------


@pytest.mark.parametrize("stream", [True, False])
def test_model_echo_adds_newline(stream):
    out = _Buffer()
    echo = ModelEcho(out, stream=stream, color=False)
    if stream:
        echo.chunk("ab")
        echo.chunk("c")
    echo.done("abc")
    assert out.getvalue() == "abc\n"


def test_model_echo_color():
    out = _Buffer()
    ModelEcho(out, stream=False, color=True).done("x")
    assert out.getvalue() == "\x1b[32mx\x1b[0m\n"


def test_no_color_when_piped(tmp_path):
    r = pdl("run", write(tmp_path, "m.pdl", "model: m\n"), "--backend", "mock=ok")
    assert "\x1b[" not in r.stdout


def test_parse_data_flag():
    assert parse_data_flag("a=1") == ("a", 1)
    assert parse_data_flag("a=hello") == ("a", "hello")
    assert parse_data_flag('a={"k": [1]}') == ("a", {"k": [1]})


def test_cmd_run_in_process(tmp_path):
    args = build_parser().parse_args(["run", str(write(tmp_path, "p.pdl", "[a, {model: m}]\n")), "--backend", "mock=ok"])
    out, err = _Buffer(), _Buffer()
    assert cmd_run(args, out, err) == 0
    assert out.getvalue() == "ok\nok\n"


# -- traces ------------------------------------------------------------------------------


def test_trace_of_hi(tmp_path):
    trace = tmp_path / "t.json"
    pdl("run", write(tmp_path, "hi.pdl", '"hi"\n'), "--trace", trace)
    data = json.loads(trace.read_text())
    assert data["schema"] == SCHEMA
    (node,) = data["root"]["children"]
    assert node["kind"] == "expr" and node["children"] == [] and node["result_preview"] == "hi"
    assert node["timing_ms"] is None


def test_traces_conform_to_published_schema(tmp_path):
    schema = json.loads(pdl("schema", "--trace").stdout)
    validator = jsonschema.Draft202012Validator(schema)
    trace = tmp_path / "t.json"
    pdl("run", write(tmp_path, "e.pdl", "[a, {text: [b, '${ nope }'], def: t}]\n"), "--trace", trace, "--trace-timing")
    for doc in (json.loads(trace.read_text()), json.loads((FIXTURES / "chatbot_expected_trace.json").read_text())):
        assert list(validator.iter_errors(doc)) == []


def test_chatbot_trace_matches_golden(tmp_path):
    trace = tmp_path / "t.json"
    pdl(*CHATBOT_ARGS, "--trace", trace)
    assert trace.read_bytes() == (FIXTURES / "chatbot_expected_trace.json").read_bytes()


def test_react_trace_annotations(tmp_path):
    trace = tmp_path / "t.json"
    pdl("run", FIXTURES / "react.pdl", "--backend", f"scripted={FIXTURES / 'react_answers.json'}",
        "--code-runner", f"wiki={sys.executable} {FIXTURES / 'wiki_stub.py'}", "--trace", trace)
    nodes = list(_walk(json.loads(trace.read_text())["root"]))
    actions = [n for n in nodes if n["doc_path"] == "text[1].repeat.text[3]"]
    assert len(actions) == 3
    assert all(n["annotations"] == {"parser": "json", "spec": "{name: str, arguments: obj}"} for n in actions)
    assert all(n["defs_bound"] == ["action"] for n in actions)


def test_trace_truncates_previews(tmp_path):
    trace = tmp_path / "t.json"
    pdl("run", write(tmp_path, "long.pdl", f'"{"x" * 5000}"\n'), "--trace", trace)
    (node,) = json.loads(trace.read_text())["root"]["children"]
    assert len(node["result_preview"]) == PREVIEW_LIMIT and node["result_truncated"] is True


def test_trace_timing_opt_in(tmp_path):
    trace = tmp_path / "t.json"
    pdl("run", write(tmp_path, "hi.pdl", '"hi"\n'), "--trace", trace, "--trace-timing")
    (node,) = json.loads(trace.read_text())["root"]["children"]
    assert isinstance(node["timing_ms"], float)


def test_trace_records_errors(tmp_path):
    trace = tmp_path / "t.json"
    r = pdl("run", write(tmp_path, "e.pdl", "[a, '${ nope }']\n"), "--trace", trace)
    assert r.returncode == 1
    nodes = list(_walk(json.loads(trace.read_text())["root"]))
    assert any("undefined variable 'nope'" in n.get("error", "") for n in nodes)


def test_trace_io_error_exits_1_after_evaluation(tmp_path):
    r = pdl("run", write(tmp_path, "hi.pdl", '"hi"\n'), "--trace", tmp_path / "missing" / "t.json")
    assert r.returncode == 1 and r.stdout == "hi\n" and "cannot write trace" in r.stderr


def test_trace_does_not_change_results(tmp_path):
    plain = pdl(*CHATBOT_ARGS)
    traced = pdl(*CHATBOT_ARGS, "--trace", tmp_path / "t.json")
    assert plain.stdout == traced.stdout and plain.returncode == traced.returncode


# -- helpers ----------------------------------------------------------------------------


class _Buffer:
    def __init__(self):
        self.parts = []

    def write(self, s):
        self.parts.append(s)

    def flush(self):
        pass

    def getvalue(self):
        return "".join(self.parts)


def _walk(node):
    yield node
    for c in node["children"]:
        yield from _walk(c)
