from typing import Optional


class ValidationError(Exception):
    """Input data or configuration violates an invariant. The current command should stop."""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class ParseError(ValidationError):
    """
    A cell of an input table could not be read.

    Parameters
    ----------
    row : int
        1-based line number in the file (the header is line 1)
    column : int
        1-based column number in the file
    """

    def __init__(self, message: str, path: str, row: int, column: int):
        self.path = path
        self.row = row
        self.column = column
        super().__init__(message, location=f"{path}:{row}:{column}")


class DomainError(ValueError):
    """Distribution parameters outside their domain"""

    pass


class FitError(Exception):
    """Numerical failure while fitting, e.g. a non-finite log-likelihood"""

    pass
