"""Exception hierarchy shared by all mrforge modules."""


class MRForgeError(Exception):
    """Base class for every error raised by mrforge."""


class ValidationError(MRForgeError, ValueError):
    """An argument violates a documented invariant or shape contract."""


class SingularParameterError(ValidationError):
    """The Coriolis parameter is zero, so G/F is undefined."""


class NonFiniteCostError(MRForgeError, ArithmeticError):
    """A cost evaluation produced inf/nan for one of the samples."""

    def __init__(self, sample_index, message=None):
        self.sample_index = int(sample_index)
        super().__init__(message or f"non-finite cost contribution from sample {sample_index}")


class SearchFailureError(MRForgeError):
    """Every candidate the search produced evaluated to a non-finite cost."""


class DimensionCapError(ValidationError):
    """Dense search refused because the flattened input is too large."""


class ConvergenceError(MRForgeError):
    """Power iteration did not converge within its iteration cap."""

    def __init__(self, message, residual):
        self.residual = float(residual)
        super().__init__(f"{message} (residual {residual:.3e})")
