"""Exception types shared across the toolkit.

Argument/shape problems raise plain ``ValueError``; the classes here mark
failures that a caller may want to handle differently (retry with another
rank, fall back to a denser model, report a reproducibility bug).
"""


class DataError(ValueError):
    """Input data contains non-finite or otherwise unusable values."""


class DegeneracyError(RuntimeError):
    """A linear system or factor was numerically singular.

    ``detail`` names the offending block or mode when known.
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration budget before converging."""

    def __init__(self, message, kkt_residual=None):
        super().__init__(message)
        self.kkt_residual = kkt_residual


class DeterminismError(RuntimeError):
    """A regenerated sample stream did not match its first-pass record."""
