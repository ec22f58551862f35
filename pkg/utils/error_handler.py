"""
Error Handling System for QubitThermo
Provides standardized error categorization, history and CLI exit-code mapping.
"""

from utils.common_imports import *
from utils.logger import logger
import argparse
import traceback
import functools
from enum import Enum
from typing import Callable


class ErrorSeverity(Enum):
    """Error severity levels"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for better handling"""
    NUMERICAL = "numerical"
    CONFIGURATION = "configuration"
    FILE_IO = "file_io"
    VALIDATION = "validation"
    EXPORT = "export"


# Exit codes of the command-line surface
EXIT_SUCCESS = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class ErrorContext:
    """Context information for error handling"""

    def __init__(self,
                 operation: str,
                 category: ErrorCategory,
                 severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 user_message: str = None,
                 additional_data: Dict = None):
        self.operation = operation
        self.category = category
        self.severity = severity
        self.user_message = user_message
        self.additional_data = additional_data or {}
        self.timestamp = datetime.now()


def categorize(error: BaseException) -> ErrorCategory:
    """Map an exception onto its error category"""
    if isinstance(error, (ConfigurationError, argparse.ArgumentError)):
        return ErrorCategory.CONFIGURATION
    if isinstance(error, ExportError):
        return ErrorCategory.EXPORT
    if isinstance(error, (GridMismatchError, CascadeError)):
        return ErrorCategory.VALIDATION
    if isinstance(error, (DomainError, IntegrationError, FloatingPointError)):
        return ErrorCategory.NUMERICAL
    if isinstance(error, OSError):
        return ErrorCategory.FILE_IO
    return ErrorCategory.NUMERICAL


def exit_code_for(error: BaseException) -> int:
    """
    Exit code for an exception escaping a CLI command

    Usage and configuration problems exit with 2, everything else with 1.
    """
    if isinstance(error, (ConfigurationError, argparse.ArgumentError)):
        return EXIT_USAGE
    if isinstance(error, FileNotFoundError):
        return EXIT_USAGE
    return EXIT_NUMERICAL


class ErrorHandler:
    """Error handling system with history and per-category counts"""

    def __init__(self, max_history_size: int = 1000):
        """Initialize error handler"""
        self.error_history = []
        self.error_counts = defaultdict(int)
        self.max_history_size = max_history_size

    def handle_error(self,
                     error: Exception,
                     context: ErrorContext,
                     raise_on_critical: bool = True) -> int:
        """
        Handle an error: log it, record it and work out the exit code

        Args:
            error: The exception that occurred
            context: Error context information
            raise_on_critical: Whether to re-raise critical errors

        Returns:
            Exit code the CLI should terminate with
        """
        self._log_error(error, context)
        self._add_to_history(error, context)

        error_key = f"{context.category.value}:{type(error).__name__}"
        self.error_counts[error_key] += 1

        if context.severity == ErrorSeverity.CRITICAL and raise_on_critical:
            raise error

        return exit_code_for(error)

    def _log_error(self, error: Exception, context: ErrorContext):
        """Log error with appropriate level"""
        error_msg = f"Error in {context.operation}: {error}"

        if context.additional_data:
            error_msg += f" | Data: {context.additional_data}"

        if context.severity == ErrorSeverity.CRITICAL:
            logger.critical(error_msg, error)
        elif context.severity == ErrorSeverity.HIGH:
            logger.error(error_msg)
        elif context.severity == ErrorSeverity.MEDIUM:
            logger.warning(error_msg)
        else:
            logger.debug(error_msg)

    def _add_to_history(self, error: Exception, context: ErrorContext):
        """Add error to history with size limit"""
        error_record = {
            'timestamp': context.timestamp,
            'error_type': type(error).__name__,
            'error_message': str(error),
            'operation': context.operation,
            'category': context.category.value,
            'severity': context.severity.value,
            'traceback': traceback.format_exc()
        }

        self.error_history.append(error_record)

        if len(self.error_history) > self.max_history_size:
            self.error_history = self.error_history[-self.max_history_size:]

    def get_error_statistics(self) -> Dict[str, Any]:
        """Get error statistics"""
        return {
            'total_errors': len(self.error_history),
            'error_counts': dict(self.error_counts),
            'recent_errors': self.error_history[-10:] if self.error_history else []
        }

    def clear_error_history(self):
        """Clear error history"""
        self.error_history.clear()
        self.error_counts.clear()


# Global error handler instance
error_handler = ErrorHandler()


def handle_errors(category: ErrorCategory,
                  operation: str = None,
                  severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                  default: Any = None):
    """
    Decorator that logs and records failures, returning `default` instead of raising

    Usage:
        @handle_errors(ErrorCategory.NUMERICAL, "Evaluating map cell", default=None)
        def evaluate_cell(...):
            ...
    """
    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            func_operation = operation or f"{func.__name__}"
            try:
                return func(*args, **kwargs)
            except QubitThermoError as e:
                context = ErrorContext(
                    operation=func_operation,
                    category=category,
                    severity=severity,
                    additional_data={'function': func.__name__}
                )
                error_handler.handle_error(e, context, raise_on_critical=True)
                return default

        return wrapper
    return decorator
