"""Exception hierarchy shared across the package."""


class EquitriageError(Exception):
    """Base class; every error carries a short machine-readable code."""

    code = "error"

    def to_record(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ConfigurationError(EquitriageError):
    code = "configuration"


class ValidationError(EquitriageError, ValueError):
    code = "validation"


class InsufficientDataError(EquitriageError):
    code = "insufficient_data"


class DataIntegrityError(EquitriageError, ValueError):
    code = "data_integrity"


class ComputationError(EquitriageError, ArithmeticError):
    code = "computation"


class CalibrationError(EquitriageError):
    code = "calibration"


class TrainingAborted(EquitriageError):
    """Raised when a loss or gradient goes non-finite.

    ``snapshot`` holds whatever diagnostic state the trainer captured.
    """

    code = "training_aborted"

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class FingerprintMismatch(EquitriageError):
    code = "fingerprint_mismatch"
