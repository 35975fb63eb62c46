"""Exception hierarchy.

Two families matter to the command line: ``ValidationError`` subclasses map to
exit status 2 and ``NumericalError`` subclasses map to exit status 3.
"""


class DiracRLSError(Exception):
    """Base class for all package errors."""

    module = "dirac_rls"

    def __init__(self, message, *, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ValidationError(DiracRLSError, ValueError):
    """Bad input that a caller could have avoided."""


class NumericalError(DiracRLSError, ArithmeticError):
    """A computation failed or could not reach its tolerance."""


class DegenerateInputError(ValidationError):
    module = "dirac_algebra"


class PoleError(NumericalError):
    module = "dirac_algebra"


class SingularityError(ValidationError):
    module = "green_kernel"


class ThresholdError(ValidationError):
    module = "green_kernel"


class BranchError(ValidationError):
    module = "green_kernel"


class QuadratureBudgetError(NumericalError):
    module = "green_kernel"


class NonHermitianError(ValidationError):
    module = "potential"


class SpecMismatchError(ValidationError):
    module = "scattering"


class MemoryBudgetError(ValidationError):
    module = "rls_solver"


class SingularSystemError(NumericalError):
    module = "rls_solver"


class ConvergenceError(NumericalError):
    module = "rls_solver"


class BoxEscapeError(NumericalError):
    module = "dynamics"


class ConfigError(ValidationError):
    module = "cli_io"
