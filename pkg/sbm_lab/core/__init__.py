"""
Core runner components.
"""
from .config import config
from .errors import ConfigError, LabError, NumericalAbort, PreconditionError, ShootingBracketError

__all__ = ['config', 'ConfigError', 'LabError', 'NumericalAbort', 'PreconditionError', 'ShootingBracketError']
