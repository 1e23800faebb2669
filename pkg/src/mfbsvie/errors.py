"""Exception hierarchy shared by every module.

All errors derive from :class:`MfbsvieError`; the argument-validation
errors additionally derive from :class:`ValueError` so callers can catch
them the idiomatic way.
"""

from __future__ import annotations

from typing import Any


class MfbsvieError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MfbsvieError, ValueError):
    """An argument is outside its admissible range."""


class DomainError(MfbsvieError, ValueError):
    """A function was evaluated outside its mathematical domain (e.g. t > s)."""


class DimensionMismatch(MfbsvieError, ValueError):
    """Two objects that must share a dimension do not."""


class ValidationError(MfbsvieError, ValueError):
    """A configuration or constants record is inconsistent."""


class UnsupportedConfiguration(MfbsvieError, ValueError):
    """The requested combination of options is not implemented or not allowed."""


class ResourceLimitError(MfbsvieError):
    """A configured size cap (lattice depth, assignment size) was exceeded."""


class NumericalFailure(MfbsvieError):
    """A linear-algebra step failed; ``diagnostics`` says where and why."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DivergenceError(MfbsvieError):
    """Non-finite values appeared in a backward sweep.

    ``cell`` is the first offending triangular pair ``(i, k)``; ``particle``
    is set when the failure happened inside a particle system.
    """

    def __init__(self, message: str, cell: tuple[int, int] | None = None,
                 particle: int | None = None):
        super().__init__(message)
        self.cell = cell
        self.particle = particle


class NonConvergenceError(MfbsvieError):
    """Picard iteration hit its iteration cap.

    ``trail`` holds the weighted-norm differences of every iteration and
    ``solution`` the last iterate, so diagnostics can still be written.
    """

    def __init__(self, message: str, trail: list[float], solution: Any = None):
        super().__init__(message)
        self.trail = list(trail)
        self.solution = solution
