"""Exception hierarchy shared across the engine.

Exit-code mapping for the CLI: ValidationError and its subclasses map to
exit code 1, IO failures (OSError) to exit code 2.
"""


class ExgraphError(Exception):
    """Base class for all engine errors."""


class ValidationError(ExgraphError):
    """Input violates a documented invariant (bad record, bad config, bad shape)."""


class ParseError(ValidationError):
    """A data file does not conform to its declared format."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class CheckpointError(ValidationError):
    """Checkpoint is missing, has the wrong version, or is dimensionally incompatible."""


class TrainingAbort(ExgraphError):
    """Raised when a non-finite loss or gradient is detected mid-epoch."""
