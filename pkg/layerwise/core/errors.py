"""
Error handling system for layerwise
Structured exceptions plus the mapping to command-line exit codes
"""

import traceback
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import structlog
from pydantic import ValidationError

from layerwise.core.config import settings

logger = structlog.get_logger()


class ErrorCode(str, Enum):
    """Standardized error codes"""
    # Numerics
    DIMENSION_ERROR = "DIMENSION_ERROR"
    NON_FINITE_VALUE = "NON_FINITE_VALUE"
    TARGET_INDEX_ERROR = "TARGET_INDEX_ERROR"

    # Contracts and configuration
    CONTRACT_VIOLATION = "CONTRACT_VIOLATION"
    CONFIGURATION_ERROR = "CONFIGURATION_ERROR"

    # Training
    DIVERGED_TRAINING = "DIVERGED_TRAINING"

    # Files
    CHECKPOINT_FORMAT = "CHECKPOINT_FORMAT"
    CHECKPOINT_VERSION = "CHECKPOINT_VERSION"
    CHECKPOINT_TRUNCATED = "CHECKPOINT_TRUNCATED"
    IO_ERROR = "IO_ERROR"

    # Experiments
    MISSING_CELL = "MISSING_CELL"

    # Generic
    USAGE_ERROR = "USAGE_ERROR"
    INTERNAL_ERROR = "INTERNAL_ERROR"


class LayerwiseError(Exception):
    """Base exception with structured error details"""

    error_code: ErrorCode = ErrorCode.INTERNAL_ERROR
    default_help: Optional[str] = None

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        help: Optional[str] = None,
    ):
        self.message = message
        self.details = details or {}
        self.help = help or self.default_help
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.error_code.value,
            "message": self.message,
            "details": self.details,
            "help": self.help,
        }


class DimensionError(LayerwiseError, ValueError):
    """Shape mismatch at an operation boundary"""

    error_code = ErrorCode.DIMENSION_ERROR

    def __init__(self, op: str, *shapes: Sequence[int], message: Optional[str] = None):
        shape_text = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(
            message or f"{op}: incompatible shapes {shape_text}",
            details={"op": op, "shapes": [list(s) for s in shapes]},
        )
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class NonFiniteValueError(LayerwiseError, ValueError):
    """NaN or infinity in external input"""

    error_code = ErrorCode.NON_FINITE_VALUE


class TargetIndexError(LayerwiseError, IndexError):
    """Class target outside the logits range"""

    error_code = ErrorCode.TARGET_INDEX_ERROR


class ContractError(LayerwiseError):
    """Precondition of an operation violated"""

    error_code = ErrorCode.CONTRACT_VIOLATION


class ConfigurationError(LayerwiseError, ValueError):
    """Invalid model, dataset or run configuration"""

    error_code = ErrorCode.CONFIGURATION_ERROR
    default_help = "Check the configuration file and command-line overrides"


class DivergedTrainingError(LayerwiseError, ArithmeticError):
    """Loss became NaN or infinite during training"""

    error_code = ErrorCode.DIVERGED_TRAINING
    default_help = "Lower the learning rate or enable clip_norm"

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} (loss={loss})",
            details={"epoch": epoch, "batch": batch, "loss": str(loss)},
        )
        self.epoch = epoch
        self.batch = batch


class CheckpointFormatError(LayerwiseError):
    error_code = ErrorCode.CHECKPOINT_FORMAT


class CheckpointVersionError(LayerwiseError):
    error_code = ErrorCode.CHECKPOINT_VERSION


class CheckpointTruncatedError(LayerwiseError):
    error_code = ErrorCode.CHECKPOINT_TRUNCATED

    def __init__(self, path: str, expected: int, actual: int):
        super().__init__(
            f"{path}: truncated payload, expected {expected} bytes, found {actual}",
            details={"path": path, "expected": expected, "actual": actual},
        )
        self.expected = expected
        self.actual = actual


class CorpusReadError(LayerwiseError, OSError):
    error_code = ErrorCode.IO_ERROR


class ReportWriteError(LayerwiseError, OSError):
    error_code = ErrorCode.IO_ERROR


class MissingCellError(LayerwiseError):
    """Experiment report does not match its declared grid"""

    error_code = ErrorCode.MISSING_CELL


class UsageError(LayerwiseError):
    error_code = ErrorCode.USAGE_ERROR


class ErrorHandler:
    """Centralized mapping from exceptions to exit codes and one-line messages"""

    USAGE_EXIT = 2
    FAILURE_EXIT = 1

    def __init__(self):
        self.error_mapping = {
            "ValidationError": self._handle_validation_error,
            "FileNotFoundError": self._handle_os_error,
            "PermissionError": self._handle_os_error,
            "IsADirectoryError": self._handle_os_error,
        }

    def handle_exception(self, exc: BaseException, command: Optional[str] = None) -> Tuple[int, str]:
        """Return (exit code, one-line error) for any exception"""
        if isinstance(exc, UsageError):
            return self.USAGE_EXIT, self._format(exc.error_code, exc.message)

        if isinstance(exc, LayerwiseError):
            logger.error(
                "command_failed",
                command=command,
                error=exc.error_code.value,
                message=exc.message,
                details=exc.details,
            )
            return self.FAILURE_EXIT, self._format(exc.error_code, exc.message)

        handler = self.error_mapping.get(type(exc).__name__)
        if handler:
            return handler(exc, command)

        return self._handle_generic_error(exc, command)

    def _handle_validation_error(self, exc: ValidationError, command: Optional[str]) -> Tuple[int, str]:
        """Handle pydantic validation errors"""
        field_errors = []
        for error in exc.errors():
            field = ".".join(str(loc) for loc in error["loc"])
            field_errors.append(f"{field}: {error['msg']}")
        message = "; ".join(field_errors) or str(exc)
        logger.error("command_failed", command=command, error=ErrorCode.CONFIGURATION_ERROR.value, message=message)
        return self.FAILURE_EXIT, self._format(ErrorCode.CONFIGURATION_ERROR, message)

    def _handle_os_error(self, exc: OSError, command: Optional[str]) -> Tuple[int, str]:
        message = f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc)
        logger.error("command_failed", command=command, error=ErrorCode.IO_ERROR.value, message=message)
        return self.FAILURE_EXIT, self._format(ErrorCode.IO_ERROR, message)

    def _handle_generic_error(self, exc: BaseException, command: Optional[str]) -> Tuple[int, str]:
        """Handle unexpected errors"""
        logger.error(
            "command_failed",
            command=command,
            error=ErrorCode.INTERNAL_ERROR.value,
            error_type=type(exc).__name__,
            traceback=traceback.format_exc() if settings.is_development else None,
        )
        return self.FAILURE_EXIT, self._format(ErrorCode.INTERNAL_ERROR, f"{type(exc).__name__}: {exc}")

    @staticmethod
    def _format(code: ErrorCode, message: str) -> str:
        return f"error: {code.value}: {' '.join(str(message).split())}"


# Global error handler instance
error_handler = ErrorHandler()
