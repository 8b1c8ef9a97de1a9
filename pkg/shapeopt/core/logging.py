import json
import logging
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

from shapeopt.core.config import get_settings


class ShapeOptLogger:
    """Centralized logging configuration for the shapeopt toolkit"""

    def __init__(self):
        self.settings = get_settings()
        self.log_dir = Path(self.settings.log_dir)
        if self.settings.log_to_file:
            self.log_dir.mkdir(parents=True, exist_ok=True)

        # Separate loggers for driver output, inner solvers and errors
        self.app_logger = self._setup_logger("shapeopt.app", "app.log")
        self.solver_logger = self._setup_logger("shapeopt.solver", "solver.log")
        self.error_logger = self._setup_logger("shapeopt.error", "error.log", level=logging.ERROR)

        # Parent logger for every module under the package (logging.getLogger(__name__))
        self.package_logger = self._setup_logger("shapeopt.services", "services.log")

    def _setup_logger(self, name: str, filename: str, level: Optional[int] = None) -> logging.Logger:
        """Setup a logger with console output and optional file rotation"""
        logger = logging.getLogger(name)

        # Avoid duplicate handlers if logger already exists
        if logger.handlers:
            return logger

        if level is None:
            level = logging.getLevelName(self.settings.log_level.upper())
            if not isinstance(level, int):
                level = logging.INFO
        logger.setLevel(logging.DEBUG if self.settings.debug else level)

        detailed_formatter = logging.Formatter(
            fmt='%(asctime)s | %(name)s | %(levelname)s | %(funcName)s:%(lineno)d | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(detailed_formatter)
        logger.addHandler(console_handler)

        if self.settings.log_to_file:
            # 10MB per file, keep 5 backups
            file_handler = RotatingFileHandler(
                self.log_dir / filename,
                maxBytes=10 * 1024 * 1024,
                backupCount=5,
                encoding='utf-8'
            )
            file_handler.setFormatter(detailed_formatter)
            logger.addHandler(file_handler)

        logger.propagate = False
        return logger

    @staticmethod
    def _timestamp() -> str:
        return datetime.now(timezone.utc).isoformat()

    def log_iteration(self, algorithm: str, iteration: int, objective: float,
                      grad_norm: float, step_norm: float, e_max: float = 0.0,
                      c_min: Optional[float] = None, step_scale: float = 1.0):
        """Log one optimizer iteration"""
        log_data = {
            "algorithm": algorithm,
            "iter": iteration,
            "objective": objective,
            "grad_norm": grad_norm,
            "step_norm": step_norm,
            "E_max": e_max,
            "C_min": c_min,
            "step_scale": step_scale,
        }
        self.app_logger.info(f"Iteration: {json.dumps(log_data)}")

    def log_solver(self, kind: str, iterations: int, residual: float,
                   converged: bool = True, functional: Optional[str] = None):
        """Log a fixed-point solve summary"""
        log_data = {
            "kind": kind,
            "functional": functional,
            "iterations": iterations,
            "residual": residual,
            "converged": converged,
        }
        if converged:
            self.solver_logger.debug(f"Fixed point: {json.dumps(log_data)}")
        else:
            self.solver_logger.warning(f"Fixed point: {json.dumps(log_data)}")

    def log_check(self, check_id: str, passed: bool, measured: float, tolerance: float):
        """Log a verification check outcome"""
        log_data = {
            "check": check_id,
            "passed": passed,
            "measured": measured,
            "tolerance": tolerance,
            "timestamp": self._timestamp(),
        }
        if passed:
            self.app_logger.info(f"Check: {json.dumps(log_data)}")
        else:
            self.app_logger.error(f"Check: {json.dumps(log_data)}")

    def log_error(self, error: Exception, context: Optional[Dict[str, Any]] = None):
        """Log error with context information"""
        error_data = {
            "error_type": type(error).__name__,
            "error_message": str(error),
            "context": context or {},
            "timestamp": self._timestamp(),
        }
        self.error_logger.error(f"Error: {json.dumps(error_data, default=str)}")


# Global logger instance
shapeopt_logger = ShapeOptLogger()


def get_app_logger() -> logging.Logger:
    return shapeopt_logger.app_logger


def log_iteration(*args, **kwargs):
    return shapeopt_logger.log_iteration(*args, **kwargs)


def log_solver(*args, **kwargs):
    return shapeopt_logger.log_solver(*args, **kwargs)


def log_check(*args, **kwargs):
    return shapeopt_logger.log_check(*args, **kwargs)


def log_error(*args, **kwargs):
    return shapeopt_logger.log_error(*args, **kwargs)
