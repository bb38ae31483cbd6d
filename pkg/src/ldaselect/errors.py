"""Exception types shared across the package."""


class LdaSelectError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LdaSelectError):
    """Invalid configuration, arguments or preconditions."""


class FormatError(LdaSelectError):
    """Malformed or corrupt data file (manifest, features, models, corpora)."""


class StageError(LdaSelectError):
    """A pipeline stage failed; the message names the stage and the cause."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
