"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed to reach its requested accuracy."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class SwallowedError(RuntimeError):
    """A point was swallowed by the hull before the end of a map chain."""

    def __init__(self, message, step_index):
        super().__init__(message)
        self.step_index = step_index


class FitError(RuntimeError):
    """A regression could not be performed (degenerate data)."""


class ResolutionError(ValueError):
    """A mesh or sampling grid is too coarse for the requested estimate."""


class Falsification(AssertionError):
    """A theorem certificate was violated; carries the offending datum."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
