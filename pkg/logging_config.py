import logging
import os
import sys
from typing import Optional, Union

from dotenv import load_dotenv

LOG_LEVEL_ENV = "EDGE_TRANSFORMER_LOG_LEVEL"


def resolve_level(level: Optional[Union[int, str]] = None) -> int:
    """Explicit level, else ``EDGE_TRANSFORMER_LOG_LEVEL`` (``.env`` honoured), else INFO."""
    if level is None:
        load_dotenv()
        level = os.getenv(LOG_LEVEL_ENV) or logging.INFO
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(level.strip().upper())
    if not isinstance(resolved, int):
        raise ValueError(f"unknown log level {level!r}")
    return resolved


def configure_logging(level: Optional[Union[int, str]] = None) -> None:
    """
    Configure root logging for the application.

    Logs to stdout with timestamps; call once at application start.
    """
    logging.basicConfig(
        level=resolve_level(level),
        format="%(asctime)s %(levelname)s %(name)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )
