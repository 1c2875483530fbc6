"""Exception hierarchy. The CLI maps each class to an exit code."""


class SGError(Exception):
    exit_code = 1


class DomainError(SGError, ValueError):
    """Argument outside the domain of an operation."""

    exit_code = 3


class AddressError(DomainError):
    """Lattice point that is not a vertex of the graph family."""


class NumericError(SGError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericError):
    pass


class NonTerminationError(NumericError):
    """A walk exceeded its step cap."""


class DegenerateFitError(NumericError):
    pass


class ResourceError(SGError):
    exit_code = 5
