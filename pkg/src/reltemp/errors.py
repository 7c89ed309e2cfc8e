"""Exception hierarchy shared by all modules and mapped to CLI exit codes."""


class ReltempError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ReltempError, ValueError):
    """Input data violates a documented precondition."""


class FormatError(ValidationError):
    """A data file is structurally malformed (ragged rows, bad syntax)."""

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(FormatError):
    """A field could not be parsed as a number."""


class StateError(ReltempError, RuntimeError):
    """An operation was called on an object that is not ready for it."""


class ConfigError(ReltempError, ValueError):
    """Invalid run configuration."""


class CheckpointError(ReltempError):
    """Checkpoint archive missing, corrupt, or of an unsupported version."""
