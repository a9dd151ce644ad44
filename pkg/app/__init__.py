"""tinyfq bootstrap.

Load config, set up logging, then hand the command line to app.cli.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import List, Optional

from .config import Settings, get_config, resolve_log_level

__version__ = "0.3.0"


def _configure_logging(settings: Settings) -> None:
    """Root logger to stderr (and log_file when set); FQA_LOG overrides the level."""
    formatter = logging.Formatter(
        '%(asctime)s %(name)s %(levelname)s : %(message)s',
        datefmt="%Y-%m-%d %H:%M:%S"
    )

    logger = logging.getLogger()
    logger.setLevel(resolve_log_level(os.getenv("FQA_LOG"), settings.log_level))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    sh = logging.StreamHandler()
    sh.setFormatter(formatter)
    logger.addHandler(sh)

    if settings.log_file:
        log_path = Path(settings.log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_path)
        fh.setFormatter(formatter)
        logger.addHandler(fh)


def run(argv: Optional[List[str]] = None) -> int:
    """Bootstrap tinyfq and dispatch one subcommand; returns the exit code."""
    from .cli import main

    settings = get_config()
    _configure_logging(settings)
    logging.getLogger(__name__).debug(f"tinyfq {__version__} starting in {settings.env} environment")
    return main(argv, settings)
