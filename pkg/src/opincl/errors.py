"""Exception types shared by all modules."""


class OpinclError(Exception):
    """Base class for all package errors."""


class InputError(OpinclError, ValueError):
    """Malformed or inconsistent input (dimension mismatch, bad exponent, ...)."""


class PreconditionError(OpinclError):
    """A theorem hypothesis required by an operation does not hold."""


class ConvergenceError(OpinclError):
    """An iteration did not reach its tolerance; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EvaluationError(OpinclError):
    """A user-supplied evaluator failed or returned a non-finite value."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where
