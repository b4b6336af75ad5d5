"""Interpreter for the Prompt Declaration Language."""

from .ast import Env, Message, flatten
from .backends import BackendRegistry, ConstantBackend, EchoBackend, FunctionBackend, ScriptedBackend
from .errors import EvalError, PDLError, PDLParseError
from .evaluator import Interpreter, evaluate, run_top_level
from .parser import load_file, load_source, parse_program

__version__ = "0.1.0"

__all__ = [
    "BackendRegistry",
    "ConstantBackend",
    "EchoBackend",
    "Env",
    "EvalError",
    "FunctionBackend",
    "Interpreter",
    "Message",
    "PDLError",
    "PDLParseError",
    "ScriptedBackend",
    "evaluate",
    "flatten",
    "load_file",
    "load_source",
    "parse_program",
    "run_top_level",
]
