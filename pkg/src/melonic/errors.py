"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes (usage 2, capacity 3, numeric 4).
"""


class MelonicError(Exception):
    """Base class for errors raised by this package."""


class InputError(MelonicError, ValueError):
    """Invalid argument: out-of-range index, dimension mismatch, empty input."""


class CapacityError(MelonicError):
    """Requested computation exceeds a configured size guard."""


class StructuralError(InputError):
    """Combinatorial object cannot support the requested operation."""


class NumericError(MelonicError, ArithmeticError):
    """Non-finite values appeared on the numeric path."""


class DegenerateStepError(NumericError):
    """The power map returned an exactly zero vector."""
