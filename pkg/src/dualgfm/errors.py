"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DualGfmError(Exception):
    """Base class for all errors raised by this package."""


class CaseValidationError(DualGfmError):
    """A case is structurally invalid (bad file, dangling reference, ...).

    ``line`` and ``column`` are 1-based positions in the source text when the
    error comes from the parser, otherwise ``None``.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)


class SingularBranchError(CaseValidationError):
    """A branch has zero series impedance."""


class ParameterError(DualGfmError, ValueError):
    """A model parameter is outside its admissible range."""


class DomainError(DualGfmError, ValueError):
    """A state value lies outside the domain of a formula (e.g. ``ln(e)`` with ``e <= 0``)."""


class AssemblyError(DualGfmError):
    """State vectors do not match the system they are evaluated against."""


class ConvergenceError(DualGfmError):
    """A Newton iteration failed to converge.

    ``mismatch`` is the last residual infinity norm and ``history`` the list of
    norms seen along the way.
    """

    def __init__(self, message: str, mismatch: float = float("nan"), history: list[float] | None = None):
        self.mismatch = mismatch
        self.history = list(history or [])
        super().__init__(f"{message} (last mismatch {mismatch:.3e})")


class StepFailure(ConvergenceError):
    """The implicit integrator could not complete a step, even after dt halving."""


class EventError(ConvergenceError):
    """The algebraic re-solve after a discrete event diverged."""


class IncompleteResultError(DualGfmError):
    """Post-processing was requested on an aborted simulation."""


class AlgebraicSingularityError(DualGfmError):
    """The algebraic Jacobian ``g_y`` is singular, so states cannot be reduced."""
