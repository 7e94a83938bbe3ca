"""
Logging configuration for the application
"""
import sys
from pathlib import Path

from loguru import logger

from app.config import settings

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level} | {name}:{function}:{line} | {message}"


def setup_logging(log_dir: str = settings.LOG_DIR):
    """Configure logging for the application"""
    logs_dir = Path(log_dir)
    logs_dir.mkdir(parents=True, exist_ok=True)

    # Remove existing handlers
    logger.remove()

    logger.add(
        logs_dir / "app.log",
        level=settings.LOG_LEVEL,
        format=LOG_FORMAT,
        encoding="utf-8",
    )
    # Warnings also go to the terminal
    logger.add(sys.stderr, level="DEBUG" if settings.DEBUG else "WARNING", format="{level}: {message}")

    return logger

setup_logging()
