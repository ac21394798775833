"""Exception hierarchy shared across the package.

Everything derives from CtilqrError so callers can catch library failures
with a single except clause while still distinguishing the recoverable
integration failures (consumed by the line search) from genuine bugs.
"""


class CtilqrError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CtilqrError):
    """Input array has the wrong shape or size."""


class NumericalError(CtilqrError):
    """An iterative numerical procedure failed to converge."""


class SingularMatrixError(NumericalError):
    """A pivot fell below the singularity threshold during elimination."""


class EvaluationError(CtilqrError):
    """A user callback produced a non-finite value."""


class DomainError(CtilqrError):
    """Evaluation was requested outside the interval a solution covers."""


class IntegrationError(CtilqrError):
    """Base class for failures inside an integration run."""


class StepBudgetError(IntegrationError):
    """The accepted-step budget was exhausted before reaching the endpoint."""


class StepSizeError(IntegrationError):
    """The step size collapsed below dt_min while the error estimate still
    failed; usually a stiffness or accuracy problem."""


class DivergenceError(IntegrationError):
    """A trajectory left the finite (or plausibly bounded) region.

    The line search treats this as a rejected candidate, not a fatal error.
    """


class SqrtBreakdownError(CtilqrError):
    """The square-root value factor P(t) became singular during the
    backward pass, so S = P Pᵀ can no longer be represented."""


class RegularizationViolatedError(CtilqrError):
    """Q_uu was singular even though the eigenvalue floor should have made
    it positive-definite; indicates a bug rather than a data problem."""


class ConfigError(CtilqrError):
    """A run configuration failed validation."""
