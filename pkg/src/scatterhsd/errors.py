"""Exception types shared across the package."""


class ScatterHSDError(Exception):
    """Base class for all package errors."""


class InvalidInput(ScatterHSDError, ValueError):
    pass


class ShapeError(ScatterHSDError, ValueError):
    pass


class NumericsError(ScatterHSDError, ArithmeticError):
    pass


class ParseError(ScatterHSDError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None when unknown."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
