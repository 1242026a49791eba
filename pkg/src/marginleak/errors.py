"""Shared exception types."""


class MarginLeakError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatchError(MarginLeakError):
    """An input's dimensionality does not match the network or dataset."""


class DegenerateNetworkError(MarginLeakError):
    """The network carries no usable signal for the requested operation."""


class TrainingDivergedError(MarginLeakError):
    """Training loss became non-finite; carries the trace up to the failure."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class FileFormatError(MarginLeakError):
    """A model, dataset, or config file does not match its documented format."""
