"""
Error hierarchy for the opcode malware classifier.

Every expected failure derives from OpclassError and carries the process
exit code the CLI returns for it:
- 2: configuration errors
- 3: data errors (bad inputs, shapes, degenerate datasets)
- 4: numeric failures during training
"""

from typing import Optional, Tuple


class OpclassError(Exception):
    """Base class for all pipeline errors."""
    exit_code = 1


class ConfigError(OpclassError):
    """Config file could not be parsed or validated."""
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ============================================================================
# Data errors
# ============================================================================

class DataError(OpclassError):
    exit_code = 3


class NoInstructions(DataError):
    """A listing yielded zero instruction lines (corrupt or encrypted file)."""

    def __init__(self, file_id: str):
        self.file_id = file_id
        super().__init__(f"no instruction lines parsed from {file_id!r}")


class EmptyCorpus(DataError):
    pass


class MissingLabel(DataError):
    def __init__(self, file_id: str):
        self.file_id = file_id
        super().__init__(f"no label for file {file_id!r}")


class InvalidLabel(DataError):
    """A label outside {0, 1}."""
    pass


class DimensionMismatch(DataError):
    pass


class FormatViolation(DataError):
    """Malformed dataset file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SingleClass(DataError):
    pass


class InsufficientRows(DataError):
    pass


class EmptyFeatureSet(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewRows(DataError):
    pass


class LeakageDetected(DataError):
    pass


class ArtifactError(DataError):
    """Persisted model file has the wrong magic or is truncated."""
    pass


# ============================================================================
# Numeric errors
# ============================================================================

class NumericError(OpclassError):
    exit_code = 4


class NonFiniteLoss(NumericError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")


# ============================================================================
# Grid wrapping
# ============================================================================

class GridCellError(OpclassError):
    """A component error raised inside one experiment grid cell."""

    def __init__(self, coordinate: Tuple, cause: OpclassError):
        self.coordinate = coordinate
        self.cause = cause
        self.exit_code = cause.exit_code
        where = "/".join(str(part) for part in coordinate)
        super().__init__(f"[{where}] {cause}")
