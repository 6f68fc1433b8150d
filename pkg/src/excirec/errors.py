"""Exception hierarchy shared by all excirec modules."""


class ExcirecError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfigError(ExcirecError, ValueError):
    """A configuration value is out of its allowed range."""


class InvalidInputError(ExcirecError, ValueError):
    """Array shapes or dimensions do not match."""


class DomainError(ExcirecError, ValueError):
    """Argument lies outside the mathematical domain of an operation."""


class SingularityError(ExcirecError, ArithmeticError):
    """Evaluation hit a pole (coincident points, plasmon resonance, ...)."""


class NumericalError(ExcirecError, ArithmeticError):
    """An iterative or linear-algebra routine failed."""


class ConvergenceError(NumericalError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateOutputError(ExcirecError, ArithmeticError):
    """A vector that must be normalized has (near) zero norm."""


class TrainingError(ExcirecError, RuntimeError):
    """Non-finite loss or gradient during training."""


class FormatError(ExcirecError, ValueError):
    """Malformed binary file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateCandidateError(ExcirecError, ArithmeticError):
    """A zero candidate coefficient vector cannot be normalized."""
