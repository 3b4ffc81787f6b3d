"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical non-convergence with 3, I/O failures with 4.
"""


class ValidationError(ValueError):
    """Input data violates a documented constraint."""


class ConvergenceError(RuntimeError):
    """An iterative method did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EnumerationCapError(ValidationError):
    """Exact enumeration would exceed the configured size cap."""


class SolverSizeError(ValidationError):
    """A transportation instance is larger than the exact solver accepts."""


class NotExpandingError(ValidationError):
    """A point failed the expanding-point certification."""


class SurgeryError(ValidationError):
    """The mass condition required by the off-diagonal surgery failed."""

    def __init__(self, message, outer_mass, inner_mass):
        super().__init__(message)
        self.outer_mass = outer_mass
        self.inner_mass = inner_mass
