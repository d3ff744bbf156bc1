"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class EmptySupervisionError(DomainError):
    """A loss or metric was asked to average over zero valid pixels."""


class FormatError(ValueError):
    """A file could not be parsed.

    ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalAbort(RuntimeError):
    """Optimization produced a non-finite parameter."""

    def __init__(self, step, message="non-finite parameter"):
        super().__init__(f"{message} at step {step}")
        self.step = step
