"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 1,
training divergence exits 2, I/O failures exit 3.
"""

from __future__ import annotations


class FlowError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FlowError):
    """Bad configuration, arguments, or input data."""


class ParseError(ValidationError):
    """A malformed input record; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaError(ValidationError):
    """Structurally inconsistent input (columns, slot counts, duplicates)."""


class DivergenceError(FlowError):
    """Training produced a non-finite loss.

    ``last_good`` holds the best parameters seen before the failure, so a
    partial checkpoint can still be written.
    """

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good
