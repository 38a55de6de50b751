"""
Logging configuration for the electromechanics toolkit.

Log records go to stderr so that stdout stays clean for command results.
"""
import logging
import sys
from typing import Optional

ROOT_LOGGER = "electromech"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Configure the ``electromech`` logger tree and return its root.

    Unknown level names fall back to INFO. Calling this again only
    changes the level.
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    root = logging.getLogger(ROOT_LOGGER)
    root.setLevel(log_level)

    # Repeated calls (tests, nested CLI invocations) must not stack handlers
    if not root.handlers:
        stderr_handler = logging.StreamHandler(sys.stderr)
        stderr_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(stderr_handler)
    for handler in root.handlers:
        handler.setLevel(log_level)

    root.propagate = False
    return root


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Child logger for a service or command module, e.g. ``get_logger('inference')``."""
    return logging.getLogger(f"{ROOT_LOGGER}.{name}" if name else ROOT_LOGGER)
