# src/hashembed/log.py
from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

from .config import LOG_LEVEL


def setup_logging(level: str | None = None) -> None:
    """
    Route the package's loggers through a rich handler on stderr.

    stdout is left alone so reports and JSON records stay machine-readable.
    """
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    root = logging.getLogger(__package__)
    root.handlers[:] = [handler]
    root.setLevel((level or LOG_LEVEL).upper())
    root.propagate = False
