"""
Exception hierarchy shared by the numerics and the runner.
"""
from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for every error raised on purpose by sbm-lab."""

    exit_code = 1


class ConfigError(LabError):
    """Experiment configuration failed validation."""

    exit_code = 2

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        self.message = message
        super().__init__(f"{field_path}: {message}")


class NumericalAbort(LabError):
    """A simulation hit a state it cannot continue from."""

    exit_code = 3

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.message = message
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ShootingBracketError(NumericalAbort):
    """The profile shooting bracket does not enclose a sign change."""


class PreconditionError(LabError, ValueError):
    """An operation was called outside its contract."""
