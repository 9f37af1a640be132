"""
Utility functions and classes.
"""
from .config_manager import config_manager

__all__ = ['config_manager']
