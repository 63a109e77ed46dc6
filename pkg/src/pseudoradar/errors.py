"""Typed errors shared across the package."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared format."""


class ParseError(FormatError):
    """A value inside an otherwise well-formed file failed to parse."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(FormatError):
    """A structured document is missing or misusing a required field."""


class InsufficientDataError(ValueError):
    """Not enough samples for the requested model size."""


class AlignmentError(ValueError):
    """Two frame collections could not be matched one to one."""

    def __init__(self, message: str, orphans: list[str] | None = None):
        self.orphans = orphans or []
        super().__init__(message)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite loss at step {step}")
