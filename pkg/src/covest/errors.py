"""Exception hierarchy shared by all covest modules."""


class CovestError(Exception):
    """Base class for covest errors."""


class DomainError(CovestError, ValueError):
    """An argument lies outside the domain of the operation."""


class InputError(CovestError, ValueError):
    """Malformed input data (wrong shape, non-finite values, wrong representation)."""


class NumericalError(CovestError, ArithmeticError):
    """A factorization or solve failed numerically."""


class FormatError(CovestError, ValueError):
    """A file could not be parsed or does not match the expected layout."""


class TrainingError(CovestError, RuntimeError):
    """Training diverged or received non-finite gradients."""
