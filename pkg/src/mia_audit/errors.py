"""Exception hierarchy shared by every module."""


class AuditError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AuditError, ValueError):
    pass


class IngestionError(AuditError):
    pass


class MissingFileError(IngestionError, FileNotFoundError):
    pass


class MissingColumnError(IngestionError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NonNumericCellError(IngestionError, ValueError):
    pass


class SingleClassError(IngestionError, ValueError):
    pass


class SplitError(AuditError, ValueError):
    pass


class ShapeError(AuditError, ValueError):
    pass


class LabelError(AuditError, ValueError):
    pass


class TrainingError(AuditError, RuntimeError):
    """Raised when optimization diverges.

    Carries the epoch and step at which the failure was detected.
    """

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class AlignmentError(AuditError, ValueError):
    pass


class EvaluationError(AuditError, ValueError):
    pass


class ReportVersionError(AuditError, ValueError):
    pass
