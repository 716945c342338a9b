"""
Middleware functions for command processing.
Includes logging setup, phase timing and the exit-code contract.
"""

import logging
import time
from functools import wraps
from typing import Callable

from alora.errors import ConfigurationError, InvariantError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class MissingArtifactError(FileNotFoundError):
    """A run directory lacks a file the command reads."""


def setup_logging(verbose: bool = False, quiet: bool = False):
    """
    Configure the root logger once per process.

    Args:
        verbose: DEBUG level
        quiet: WARNING level (wins over verbose)
    """
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    if quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def log_phase(name: str) -> Callable:
    """
    Decorator logging entry, exit and duration of a command or phase.

    Args:
        name: Label used in the log lines
    """
    def decorator(f: Callable) -> Callable:
        @wraps(f)
        def decorated(*args, **kwargs):
            logger.info(f"{name}: start")
            start = time.perf_counter()
            try:
                return f(*args, **kwargs)
            finally:
                logger.info(f"{name}: done in {time.perf_counter() - start:.3f}s")
        return decorated
    return decorator


def exit_codes(f: Callable) -> Callable:
    """
    Map a command's outcome onto the process exit code.

    0 on success, 2 for configuration errors and missing artifacts,
    3 for invariant or verification breaches, 1 for anything else.
    """
    @wraps(f)
    def decorated(*args, **kwargs) -> int:
        try:
            code = f(*args, **kwargs)
            return EXIT_OK if code is None else code
        except (ConfigurationError, MissingArtifactError) as e:
            logger.error(f"Configuration error: {e}")
            return EXIT_CONFIG
        except InvariantError as e:
            logger.error(f"Invariant violated: {e}")
            return EXIT_INVARIANT
        except Exception as e:
            logger.exception(f"Unexpected error: {e}")
            return EXIT_FAILURE
    return decorated
