"""Exception hierarchy shared by all parcon modules."""


class ParconError(Exception):
    """Base class for every error raised by parcon."""


class ParseError(ParconError):
    """Malformed expression or problem file.

    Attributes
    ----------
    offset : int
        Byte offset of the offending token in the input text.
    expected : tuple of str
        Tokens that would have been accepted at ``offset``.
    """

    def __init__(self, message, offset=0, expected=()):
        self.offset = int(offset)
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at offset {self.offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class ValidationError(ParconError):
    """A problem description violates one of its invariants."""


class BoundOrder(ValidationError):
    pass


class NegativeGamma(ValidationError):
    pass


class BoundaryViolation(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class OutOfDomain(ParconError):
    pass


class NotDifferentiable(ParconError):
    pass


class GridMismatch(ParconError):
    pass


class SolverError(ParconError):
    pass


class NewtonDivergence(SolverError):
    def __init__(self, step, residual):
        self.step = step
        self.residual = residual
        super().__init__(f"Newton iteration diverged at time step {step} (residual {residual:.3e})")


class NonFiniteState(SolverError):
    pass


class NegativeWeight(ParconError):
    pass


class GammaUnsupported(ParconError):
    pass


class MaxIterations(SolverError):
    """Raised when the optimizer exhausts its budget; carries the best iterate."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class LineSearchStall(SolverError):
    pass


class SingularNormalMatrix(ParconError):
    pass


class ControllabilityRequired(ParconError):
    pass


class SchemaError(ParconError):
    pass
