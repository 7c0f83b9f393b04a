from app.config import Config
import logging
import os
from typing import Generator

logger = logging.getLogger()


def get_output_root() -> Generator[str, None, None]:
    """
    FastAPI dependency that provides the directory runs are written under.
    Creates it on first use.

    Returns:
        Generator[str, None, None]: A generator that yields the output root path

    Raises:
        OSError: If the output root cannot be created
    """
    root = Config.output_root()
    os.makedirs(root, exist_ok=True)
    logger.debug(f"Using output root {root}")
    yield root
