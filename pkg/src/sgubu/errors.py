"""Exception hierarchy shared across the package."""


class SgubuError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SgubuError, ValueError):
    """An argument is outside the domain where the operation is defined."""


class RegimeError(ParameterError):
    """Inputs violate the stepsize/friction regime a bound or guard requires.

    The message names the violated constraint.
    """

    def __init__(self, constraint, message=None):
        self.constraint = constraint
        super().__init__(message or f"regime violated: {constraint}")


class NumericError(SgubuError, ArithmeticError):
    """A numerical routine produced a non-finite or inadmissible value."""


class DivergenceError(NumericError):
    """A chain produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state encountered at step {step}")


class NonConvergenceError(NumericError):
    """An iterative solver hit its iteration cap.

    ``last_iterate`` holds the final iterate so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class SearchFailure(SgubuError, RuntimeError):
    """The randomized matching search did not reach the required energy."""


class InvariantError(SgubuError, AssertionError):
    """An internal invariant that the construction guarantees was violated."""
