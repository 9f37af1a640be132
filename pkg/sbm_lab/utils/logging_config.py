"""
Logging configuration for sbm-lab.

Log records go to stderr; stdout carries the resolved-config echo of the runner.
"""
import sys
import logging
from typing import Optional, TextIO

from sbm_lab.core.config import config

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def configure_logging(debug: bool = False, stream: Optional[TextIO] = None) -> int:
    """Install one console handler on the root logger and return the chosen level."""
    level = logging.DEBUG if debug or config.debug_mode else logging.INFO

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    handler.setLevel(level)

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.addHandler(handler)
    root_logger.setLevel(level)

    # numpy overflow and invalid-value warnings end up in the same stream
    logging.captureWarnings(True)

    logging.debug(f"Logging configured with level: {logging.getLevelName(level)}")
    return level
