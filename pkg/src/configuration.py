import os
import logging
import sys
from typing import Optional

from src.errors import ConfigError


class Configuration:
    def __init__(self) -> None:
        self.output_dir: str = os.environ.get("NOF1_OUTPUT_DIR", "nof1_out")
        self.workers: int = self._int_env("NOF1_WORKERS", 1, minimum=1)
        self.mc_block_size: int = self._int_env("NOF1_MC_BLOCK", 5000, minimum=1)
        self.ci_level: float = self._float_env("NOF1_CI_LEVEL", 0.95)
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("NOF1_CI_LEVEL", f"must lie in (0, 1), got {self.ci_level}")

        # Logging configuration
        self.log_level: str = os.environ.get("NOF1_LOG_LEVEL", "INFO").upper()
        self.log_format: str = os.environ.get(
            "NOF1_LOG_FORMAT",
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )
        self.log_file: Optional[str] = os.environ.get("NOF1_LOG_FILE")

        self._setup_logging()

    @staticmethod
    def _int_env(name: str, default: int, minimum: int) -> int:
        raw = os.environ.get(name)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(name, f"expected an integer, got {raw!r}")
        if value < minimum:
            raise ConfigError(name, f"must be >= {minimum}, got {value}")
        return value

    @staticmethod
    def _float_env(name: str, default: float) -> float:
        raw = os.environ.get(name)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(name, f"expected a number, got {raw!r}")

    def _setup_logging(self) -> None:
        """Configure logging for the application."""
        numeric_level = getattr(logging, self.log_level, logging.INFO)
        formatter = logging.Formatter(self.log_format)

        root_logger = logging.getLogger("nof1")
        root_logger.setLevel(numeric_level)

        # one set of handlers per Configuration()
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)

        # stderr keeps stdout free for report summaries
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(numeric_level)
        root_logger.addHandler(console_handler)

        if self.log_file:
            try:
                file_handler = logging.FileHandler(self.log_file)
                file_handler.setFormatter(formatter)
                file_handler.setLevel(numeric_level)
                root_logger.addHandler(file_handler)
            except OSError as e:
                # Fall back to console logging only
                root_logger.warning("Failed to open log file %s: %s", self.log_file, e)
