"""Centralized error handling utilities for nft-capacity.

This module provides the exception hierarchy raised by the numerical core and a
unified interface for reporting failures through logging.
"""

import logging
import os
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union


class ErrorLevel(str, Enum):
    """Error severity levels for logging."""

    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


class NftCapacityError(Exception):
    """Base class for every error raised by nft-capacity.

    Attributes:
        diagnostics: Free-form numeric context (residuals, thresholds, indices)
    """

    exit_code: int = 2

    def __init__(self, message: str, **diagnostics: Any) -> None:
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = diagnostics


class ParameterError(NftCapacityError, ValueError):
    """Physical inputs or operation preconditions are not satisfied."""

    exit_code = 1


class ConfigError(NftCapacityError):
    """Experiment configuration could not be parsed or validated."""

    exit_code = 1


class NumericalError(NftCapacityError):
    """Eigensolver, overflow or conditioning failure in the numerical core."""


class DegeneracyError(NumericalError):
    """A derivative of a, a norming constant or a(xi) fell under its threshold."""


class PairingError(NumericalError):
    """Modes could not be matched between two spectra."""


class StepSizeError(NumericalError):
    """The propagation step failed the drift criterion."""


class WindowTooSmallError(NumericalError):
    """An eigenfunction does not decay inside the time window."""


class StructuralError(NumericalError):
    """Block dimensions are inconsistent."""


class DependencyError(NumericalError):
    """Data required by a later stage was not computed."""


class ConditioningError(NumericalError):
    """A covariance matrix is not positive definite after symmetrization."""


def report_error(
    exception: Exception,
    component: str,
    context_name: Optional[str] = None,
    context_data: Optional[Dict[str, Any]] = None,
    tags: Optional[Dict[str, str]] = None,
    level: ErrorLevel = ErrorLevel.ERROR,
) -> None:
    """Report an exception with standardized logging and context.

    Args:
        exception: The exception to report
        component: Component name for logging (e.g., "se_sweep", "scattering")
        context_name: Optional context name (e.g., "grid_point", "config_error")
        context_data: Optional dictionary of context data
        tags: Optional additional tags (for logging extra context)
        level: Error severity level
    """
    logger = logging.getLogger(component)
    log_method = getattr(logger, level.value, logger.error)

    data = dict(context_data or {})
    if isinstance(exception, NftCapacityError) and exception.diagnostics:
        data.setdefault("diagnostics", exception.diagnostics)

    extra_data = {"context": context_name, "data": data, "tags": tags}

    try:
        log_method(
            f"Error in {component}: {exception}",
            exc_info=level == ErrorLevel.ERROR,
            extra=extra_data,
        )
    except Exception:
        pass


def report_file_error(
    exception: Exception,
    file_path: Union[str, Path],
    operation: str = "read",
    additional_context: Optional[Dict[str, Any]] = None,
) -> None:
    """Report file-related errors with standardized context.

    Args:
        exception: The exception that occurred
        file_path: Path to the file
        operation: The operation that failed (read, write, parse, etc.)
        additional_context: Any additional context data
    """
    context_data: Dict[str, Any] = {
        "file_path": str(file_path),
        "operation": operation,
    }

    if additional_context:
        context_data.update(additional_context)

    report_error(
        exception=exception,
        component="file_handler",
        context_name="file_error",
        context_data=context_data,
        tags={"operation": operation},
    )


def get_error_context() -> Dict[str, Any]:
    """Get standard error context information.

    Returns:
        Dictionary containing system and application context
    """
    return {
        "python_version": sys.version,
        "platform": sys.platform,
        "cwd": os.getcwd(),
        "pid": os.getpid(),
        "argv": sys.argv,
    }


def report_configuration_error(
    exception: Exception,
    config_file: Optional[Union[str, Path]] = None,
    config_section: Optional[str] = None,
    additional_context: Optional[Dict[str, Any]] = None,
) -> None:
    """Report configuration-related errors.

    Args:
        exception: The configuration exception
        config_file: Path to the configuration file
        config_section: Configuration key that failed
        additional_context: Additional context data
    """
    context_data: Dict[str, Any] = {
        "config_file": str(config_file) if config_file else None,
        "config_section": config_section,
    }
    context_data.update(get_error_context())

    if additional_context:
        context_data.update(additional_context)

    report_error(
        exception=exception,
        component="configuration",
        context_name="config_error",
        context_data=context_data,
        tags={"error_type": "configuration"},
    )


def exit_code_for(exception: BaseException) -> int:
    """Map an exception to the CLI exit code contract.

    Configuration and parameter problems exit with 1, numerical failures with 2,
    anything unexpected with 2 as well.
    """
    if isinstance(exception, NftCapacityError):
        return exception.exit_code
    return 2
