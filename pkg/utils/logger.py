"""
Centralized logging for QubitThermo
One named logger shared by every module, plus helpers for the events the
toolkit reports on: scenario starts, cascade builds, norm drift and dataset writes.
"""

import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

LOG_FORMAT = '%(asctime)s %(levelname)-8s %(name)s.%(module)s:%(lineno)d  %(message)s'


class QubitThermoLogger:
    """Process-wide logger for the QubitThermo toolkit"""

    _instance: Optional['QubitThermoLogger'] = None
    _logger: Optional[logging.Logger] = None

    def __new__(cls) -> 'QubitThermoLogger':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if self._logger is None:
            self.setup_logger()

    def setup_logger(self,
                     log_level: str = "INFO",
                     log_to_file: bool = False,
                     log_to_console: bool = True,
                     log_file_path: Optional[str] = None,
                     max_log_size: int = 10 * 1024 * 1024,
                     backup_count: int = 5):
        """
        (Re)configure handlers; called once at import and again by the CLI from [logging]

        Args:
            log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
            log_to_file: Add a rotating file handler
            log_to_console: Add a stderr handler
            log_file_path: Log file; defaults to ./logs/qubitthermo.log
            max_log_size: Bytes before the log file rotates
            backup_count: Rotated files to keep
        """
        self._logger = logging.getLogger('QubitThermo')
        level = getattr(logging, log_level.upper(), logging.INFO)
        self._logger.setLevel(level)

        for handler in list(self._logger.handlers):
            handler.close()
        self._logger.handlers.clear()
        self._logger.propagate = False

        formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
        handlers = []
        if log_to_console:
            handlers.append(logging.StreamHandler())
        if log_to_file:
            if log_file_path is None:
                log_file_path = Path.cwd() / "logs" / "qubitthermo.log"
            Path(log_file_path).parent.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.handlers.RotatingFileHandler(
                log_file_path, maxBytes=max_log_size, backupCount=backup_count, encoding='utf-8'))

        for handler in handlers:
            handler.setLevel(level)
            handler.setFormatter(formatter)
            self._logger.addHandler(handler)

        self._logger.debug(f"Log level set to: {log_level}")
        if log_to_file:
            self._logger.info(f"Logging to file: {log_file_path}")

    @property
    def logger(self) -> logging.Logger:
        if self._logger is None:
            self.setup_logger()
        return self._logger

    def debug(self, message: str, *args, **kwargs):
        self.logger.debug(message, *args, **kwargs)

    def info(self, message: str, *args, **kwargs):
        self.logger.info(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs):
        self.logger.warning(message, *args, **kwargs)

    def error(self, message: str, exception: Optional[Exception] = None, *args, **kwargs):
        """Log an error; a passed exception adds its traceback"""
        if exception:
            self.logger.error(f"{message}: {exception}", exc_info=True, *args, **kwargs)
        else:
            self.logger.error(message, *args, **kwargs)

    def critical(self, message: str, exception: Optional[Exception] = None, *args, **kwargs):
        if exception:
            self.logger.critical(f"{message}: {exception}", exc_info=True, *args, **kwargs)
        else:
            self.logger.critical(message, *args, **kwargs)

    def log_performance(self, operation: str, duration: float, details: Optional[str] = None):
        message = f"Performance: {operation} took {duration:.3f}s"
        if details:
            message += f" - {details}"
        self.info(message)

    def log_scenario(self, scenario: str, details: Optional[str] = None):
        """Log the start of a scenario run"""
        message = f"Scenario: {scenario}"
        if details:
            message += f" - {details}"
        self.info(message)

    def log_cascade(self, label: str, q_minima: Sequence[float], points: int, n_converged: int):
        """One line per cascade build: Q minima per frame, grid size and converged depth"""
        minima = ", ".join(f"{q:.4g}" for q in q_minima) or "none"
        self.info(f"Cascade {label}: Q_min per frame [{minima}] on {points} points, "
                  f"{n_converged} of {len(q_minima)} frames grid-converged")

    def log_norm_drift(self, label: str, drift: float, threshold: float):
        """Norm drift is a warning past the threshold and a debug note otherwise"""
        if drift > threshold:
            self.warning(f"{label}: norm drift {drift:.2e} exceeds threshold {threshold:.1e}")
        else:
            self.debug(f"{label}: norm drift {drift:.2e}")

    def log_dataset(self, file_path: str, error: Optional[Exception] = None):
        """Record a dataset write; failures are errors"""
        if error is None:
            self.debug(f"Wrote {file_path}")
        else:
            self.error(f"Could not write {file_path}: {error}")

    def configure_for_testing(self):
        """Verbose console logging for the test session"""
        self.setup_logger(log_level="DEBUG", log_to_file=False, log_to_console=True)


# Global logger instance
logger = QubitThermoLogger()


class PerformanceTimer:
    """Context manager that logs how long an operation took"""

    def __init__(self, operation_name: str, details: Optional[str] = None):
        self.operation_name = operation_name
        self.details = details
        self.start_time = None
        self.duration = 0.0

    def __enter__(self):
        self.start_time = datetime.now()
        logger.debug(f"Starting {self.operation_name}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time:
            self.duration = (datetime.now() - self.start_time).total_seconds()
            logger.log_performance(self.operation_name, self.duration, self.details)

        if exc_type is not None:
            logger.error(f"Exception during {self.operation_name}", exc_val)
