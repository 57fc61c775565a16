"""Membership-inference auditing with difficulty-calibrated scores."""

from mia_audit.errors import (
    AuditError,
    ConfigError,
    IngestionError,
    ReportVersionError,
    ShapeError,
    SplitError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "ConfigError",
    "IngestionError",
    "ReportVersionError",
    "ShapeError",
    "SplitError",
    "TrainingError",
]
