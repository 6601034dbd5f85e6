"""loggers.py

Logging configuration.
"""

import logging
from functools import lru_cache

from rich.console import Console
from rich.logging import RichHandler


def configure_logging() -> None:
    """Configure rich logging with a stderr console handler."""
    logger = logging.getLogger('chemolab')

    if not logger.handlers:  # only add handler if none exists
        console = Console(stderr=True)
        handler = RichHandler(
            console=console,
            show_time=True,
            show_path=False,
            markup=False,
            rich_tracebacks=True,
        )
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)  # this will be overridden by settings
        logger.propagate = False


@lru_cache
def get_logger(name: str | None = None) -> logging.Logger:
    """Retrieves a logger with the given name, or the package logger.

    Args:
        name: The name of the logger to retrieve.

    Returns:
        The logger with the given name, nested under `chemolab`.

    Example:
        ```python
        from chemolab.loggers import get_logger

        logger = get_logger('chemolab.solver')
        logger.info('accepted step')  # chemolab.solver: accepted step
        ```
    """
    configure_logging()

    parent_logger = logging.getLogger('chemolab')

    if name:
        # allow explicit full names, "chemolab.x" must not become
        # "chemolab.chemolab.x"
        if name == parent_logger.name or name.startswith(
            parent_logger.name + '.'
        ):
            logger = logging.getLogger(name)
        else:
            logger = parent_logger.getChild(name)
    else:
        logger = parent_logger

    return logger
