"""Python bindings for the sechyp probes.

Reports come back as plain dicts; models and states are numpy arrays.
"""

import json as _json
import os as _os

from . import _core
from ._core import (
    DivergenceError,
    Error,
    InputError,
    InsufficientDataError,
    IntegrationFailure,
    NumericError,
    PreconditionError,
    RangeError,
    VectorFieldModel,
    command_names,
    flow_point,
    integrate,
)

__version__ = _core.__version__


def classify_equilibrium(model, sigma, d_s=1):
    return _json.loads(_core.classify_equilibrium(model, sigma, d_s))


def lyapunov_spectrum(model, x0, T, transient=0.0, tol=1e-9):
    return _json.loads(_core.lyapunov_spectrum(model, x0, T, transient, tol))


def load_config(path):
    """Reads a config file, or the config embedded in a run manifest."""
    with open(path) as fh:
        doc = _json.load(fh)
    if "config" in doc and "commands" in doc:
        return doc["config"]
    return doc


def run(command, config):
    """Runs one analysis command.

    `config` is a dict or a path. Returns (passed, report, artifacts), where
    artifacts maps file names to their text.
    """
    if isinstance(config, (str, _os.PathLike)):
        config = load_config(config)
    passed, report, artifacts = _core.run_command(command, _json.dumps(config))
    return passed, _json.loads(report), dict(artifacts)


def main(args):
    """The command-line entry point; returns the exit code."""
    return _core.cli_main([str(a) for a in args])


__all__ = [
    "DivergenceError",
    "Error",
    "InputError",
    "InsufficientDataError",
    "IntegrationFailure",
    "NumericError",
    "PreconditionError",
    "RangeError",
    "VectorFieldModel",
    "classify_equilibrium",
    "command_names",
    "flow_point",
    "integrate",
    "load_config",
    "lyapunov_spectrum",
    "main",
    "run",
]
