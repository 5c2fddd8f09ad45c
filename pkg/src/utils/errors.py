"""Exception types raised by the simulation library.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericalError`` to exit
code 3; everything else is a bug.
"""

from typing import Any, Dict, Optional


class GflSyncError(Exception):
    """Base class for library errors"""


class ConfigError(GflSyncError, ValueError):
    """Invalid scenario document, override or parameter set"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DimensionError(GflSyncError, ValueError):
    """Matrix shapes do not fit together"""


class UndefinedAngleError(GflSyncError, ValueError):
    """Phase requested for a zero vector"""


class InsufficientOscillationError(GflSyncError, ValueError):
    """Series has too few extrema to fit a decay envelope"""


class NumericalError(GflSyncError, ArithmeticError):
    """Numerical procedure failed; ``diagnostics`` says where"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class ConvergenceError(NumericalError):
    """Iteration hit its cap before meeting the tolerance"""


class SingularityError(NumericalError):
    """Operating point sits on a singular configuration"""
