"""
Error Types
Exception hierarchy shared by the engine, the allocator and the CLI
"""

from typing import Optional


class AloraError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(AloraError, ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class RankIndexError(AloraError, IndexError):
    """Raised for out-of-range ranks, class targets or token ids."""


class StateError(AloraError, RuntimeError):
    """Raised when an operation is illegal in the current object state."""


class ConfigurationError(AloraError, ValueError):
    """
    Raised for invalid configuration.

    Attributes:
        field_path: Dotted path of the offending field (e.g. "alloc.r_init")
    """

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class InvariantError(AloraError, AssertionError):
    """Raised when a runtime invariant or verification probe fails."""
