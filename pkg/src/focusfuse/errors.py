"""Exception hierarchy shared by the library and the CLI exit-code scheme."""


class FocusFuseError(Exception):
    """Base class for all focusfuse errors."""


class InputError(FocusFuseError):
    """Bad user input: unreadable files, shape mismatches, contract violations.

    Maps to CLI exit code 2.
    """


class FormatError(InputError):
    """Unsupported or corrupt file format (wrong magic, bit depth, mode)."""


class ModelError(FocusFuseError):
    """Unreadable or inconsistent model artifact. Maps to CLI exit code 3."""


class NumericError(FocusFuseError):
    """Non-finite intermediate, diverging optimization, or a singular system
    where one is not allowed. Maps to CLI exit code 4.
    """


class PipelineStageError(FocusFuseError):
    """Failure inside a named pipeline stage; wraps the original exception."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
