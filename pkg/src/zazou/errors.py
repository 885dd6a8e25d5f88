"""Exception hierarchy.

Input problems derive from :class:`ValueError` (the CLI maps them to exit
code 2); numerical failures derive from :class:`ArithmeticError` (exit 1).
"""

from __future__ import annotations


class ZazouError(Exception):
    """Base class for every error raised by this package."""


class InputError(ZazouError, ValueError):
    """Malformed or inconsistent user input."""


class NewickSyntaxError(InputError):
    """Newick text that cannot be parsed; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TreeValidationError(InputError):
    """A parsed tree that breaks an invariant (labels, lengths, ultrametricity)."""


class LabelMismatchError(InputError):
    """Feature labels that do not match the tree leaves."""

    def __init__(self, message: str, labels=()):
        super().__init__(message)
        self.labels = tuple(labels)


class NumericalError(ZazouError, ArithmeticError):
    """A numerical step failed."""


class SingularCovarianceError(NumericalError):
    """Covariance matrix not positive definite even after jitter."""


class DegenerateFitError(NumericalError):
    """The scaled lasso drove the noise estimate to zero."""
