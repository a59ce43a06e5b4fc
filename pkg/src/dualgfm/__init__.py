"""Phasor-domain transient simulation of dual grid-forming converters and synchronous machines."""

from .errors import (AlgebraicSingularityError, AssemblyError, CaseValidationError, ConvergenceError, DomainError, DualGfmError,
                     EventError, IncompleteResultError, ParameterError, SingularBranchError, StepFailure)

__version__ = "0.1.0"
