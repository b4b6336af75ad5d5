import json
import sys
from pathlib import Path

import pytest

from pdl.backends import BackendRegistry, ConstantBackend, ScriptedBackend
from pdl.evaluator import evaluate

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def scripted(name: str) -> ScriptedBackend:
    return ScriptedBackend(json.loads(fixture_path(name).read_text()))


def registry(backend) -> BackendRegistry:
    return BackendRegistry(default=backend)


def run(source: str, backend=None, **kwargs):
    """Evaluate PDL source text with a constant "ok" model unless told otherwise."""
    backend = backend if backend is not None else ConstantBackend("ok")
    return evaluate(source, backends=registry(backend), **kwargs)


def pdl_cmd(*args) -> list[str]:
    return [sys.executable, "-m", "pdl", *map(str, args)]


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
