from __future__ import annotations

import os
import sys
from pathlib import Path

from loguru import logger

_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {extra} | <level>{message}</level>"


def configure_logging(level: str | None = None, *, json: bool = False, logfile: Path | None = None) -> None:
    resolved = (level or os.getenv("LEGFORGE_LOG_LEVEL", "INFO")).upper()
    logger.remove()
    logger.add(sys.stderr, level=resolved, format=_FORMAT, serialize=json)
    if logfile is not None:
        add_run_sink(logfile, level=resolved)


def add_run_sink(logfile: Path, *, level: str = "DEBUG") -> int:
    """Attach a per-run JSON log file; returns the sink id so the caller can detach it."""
    logfile.parent.mkdir(parents=True, exist_ok=True)
    return logger.add(logfile, level=level, serialize=True, enqueue=False)
