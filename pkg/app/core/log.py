"""
Logging setup for the SkyTrack tracking engine.
"""

import sys

from loguru import logger

from app.core.config import LOG_LEVEL
from app.core.exceptions import ConfigError

LOG_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Route all log output to a single stderr sink at the given level."""
    logger.remove()
    try:
        logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    except ValueError:
        logger.add(sys.stderr, level="INFO", format=LOG_FORMAT)
        raise ConfigError(f"Unknown log level '{level}'")
