"""Exception hierarchy shared by the library and the command line."""


class GraphRecError(Exception):
    """Base class for all errors raised by graphrec."""

    exit_code = 1


class SpecError(GraphRecError, ValueError):
    """Invalid experiment specification or usage."""

    exit_code = 1


class DataError(GraphRecError, ValueError):
    """Malformed or inconsistent interaction data."""

    exit_code = 2


class NumericalError(GraphRecError, ArithmeticError):
    """A numerical routine broke down (eigensolver, memory budget, ...)."""

    exit_code = 3
