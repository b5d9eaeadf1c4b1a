"""
Error Module

Exception hierarchy shared by every part of the detector. Each error
carries the process exit code the command surface reports for it:
- ValidationError family: bad input, config, files (exit 1)
- RuntimeFailure family: failures while doing valid work (exit 2)
"""

from toothnet.constants import EXIT_RUNTIME, EXIT_VALIDATION


class ToothNetError(Exception):
    """Base class for all expected failures."""

    exit_code = EXIT_RUNTIME


class ValidationError(ToothNetError):
    exit_code = EXIT_VALIDATION


class ShapeError(ValidationError):
    """Tensor shapes do not agree with an operation's contract."""


class ConfigError(ValidationError):
    """Unknown key, bad value, or unreadable configuration file."""


class AnnotationError(ValidationError):
    """
    Malformed annotation file.

    Args:
        message: What is wrong
        path: File that failed to parse
        line: Line number when the JSON itself is broken
        field: Dotted path of the offending field (e.g. teeth[3].cx)
    """

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field {field}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class GradientError(ValidationError):
    """Backward or optimizer step requested on an unusable graph."""


class CheckpointError(ValidationError):
    """Checkpoint file is corrupt or incompatible with the request."""


class DatasetError(ValidationError):
    """Dataset layout, manifest, or split problem."""


class RuntimeFailure(ToothNetError):
    exit_code = EXIT_RUNTIME


class NonFiniteLossError(RuntimeFailure):
    """Training produced NaN or inf; carries the offending breakdown."""

    def __init__(self, breakdown, step=None):
        self.breakdown = breakdown
        self.step = step
        super().__init__(f"non-finite loss at step {step}: {breakdown}")


class DatasetIOError(RuntimeFailure):
    """Reading or writing a file failed."""

    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"I/O failure on {path}: {reason}")
