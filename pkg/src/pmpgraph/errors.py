"""Exception types shared across the package."""


class GraphFormatError(ValueError):
    """Raised when an input graph file is malformed.

    ``line`` is the 1-based line number in the offending file, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SelfLoopError(GraphFormatError):
    pass


class DuplicateEdgeError(GraphFormatError):
    pass


class CalibrationError(RuntimeError):
    """No noise scale in the search range meets the privacy target."""


class ConfigError(ValueError):
    pass
