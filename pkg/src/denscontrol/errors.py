"""Exception types shared across the package."""


class DensControlError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DensControlError):
    """Operands have incompatible dimensions. Raised instead of broadcasting."""


class NonFiniteError(DensControlError):
    """A NaN or Inf appeared where only finite values are valid."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FormatError(DensControlError):
    """A binary or text file does not match its declared format."""


class StarvationError(DensControlError):
    """Rejection sampling failed to accept enough samples within the attempt budget."""


class DivergenceError(DensControlError):
    """Training produced a non-finite loss.

    ``last_good`` holds the most recent finite-state model, when available.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ExtrapolationWarning(UserWarning):
    """A density query lies far outside the regressor's training support."""
