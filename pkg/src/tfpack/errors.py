"""Exception types shared across the package.

Two classes of failure are distinguished so the CLI can map them to
different exit codes: malformed inputs (files, fields, flags) and
parameters that are well-formed but violate a constraint relative to the
data (k >= n, an empty fairness cell, a percent outside (0, 100), ...).
"""


class TfpError(Exception):
    """Base class for every error raised by tfpack."""

    category = "error"


class InputError(TfpError, ValueError):
    """Malformed or inconsistent input data."""

    category = "input"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConstraintError(TfpError, ValueError):
    """A parameter or dataset violates an operation's precondition."""

    category = "constraint"
