"""Process-level configuration using python-dotenv."""

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

DEFAULT_SEED = 20240101
DEFAULT_CHUNK_SIZE = 256


def _env_flag(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


class Config:
    """Configuration class that loads environment variables using python-dotenv.

    Experiment parameters live in the INI experiment file (see
    ``shadowprice.cli.models``); this class only holds settings that belong to
    the process: logging, worker parallelism and default locations.
    """

    def __init__(self, env_file: Optional[str] = None):
        """Initialize configuration by loading environment variables.

        Args:
            env_file: Path to .env file. If None, searches for .env in current and parent directories.
        """
        if env_file:
            load_dotenv(env_file)
        else:
            current_dir = Path.cwd()
            for path in [current_dir] + list(current_dir.parents):
                env_path = path / ".env"
                if env_path.exists():
                    load_dotenv(env_path)
                    break
            else:
                load_dotenv()

    @property
    def log_level(self) -> str:
        """Get logging level from environment."""
        return os.getenv("LOG_LEVEL", "INFO").upper()

    @property
    def log_file(self) -> Optional[str]:
        """Get log file path from environment. Unset means console only."""
        value = os.getenv("LOG_FILE")
        return value or None

    @property
    def log_json(self) -> bool:
        """Whether log records are emitted as JSON lines."""
        return _env_flag("SHADOWPRICE_LOG_JSON", True)

    @property
    def threads(self) -> int:
        """Worker cap for path-parallel Monte Carlo (``SHADOWPRICE_THREADS``)."""
        raw = os.getenv("SHADOWPRICE_THREADS")
        if raw is None or not raw.strip():
            return max(1, os.cpu_count() or 1)
        try:
            return max(1, int(raw))
        except ValueError:
            return 1

    @property
    def chunk_size(self) -> int:
        """Number of paths handed to one worker task."""
        raw = os.getenv("SHADOWPRICE_CHUNK_SIZE")
        try:
            return max(1, int(raw)) if raw else DEFAULT_CHUNK_SIZE
        except ValueError:
            return DEFAULT_CHUNK_SIZE

    @property
    def default_seed(self) -> int:
        """Seed used when neither the experiment file nor the CLI gives one."""
        raw = os.getenv("SHADOWPRICE_SEED")
        try:
            return int(raw) if raw else DEFAULT_SEED
        except ValueError:
            return DEFAULT_SEED

    @property
    def output_dir(self) -> str:
        """Default directory for experiment artifacts."""
        return os.getenv("SHADOWPRICE_OUTPUT_DIR", "results")

    def validate(self) -> list[str]:
        """Validate configuration and return a list of problems.

        Returns:
            Human-readable descriptions of malformed environment variables.
        """
        problems = []

        for name in ("SHADOWPRICE_THREADS", "SHADOWPRICE_CHUNK_SIZE", "SHADOWPRICE_SEED"):
            raw = os.getenv(name)
            if raw is None or not raw.strip():
                continue
            try:
                value = int(raw)
            except ValueError:
                problems.append(f"{name} must be an integer, got {raw!r}")
                continue
            if name != "SHADOWPRICE_SEED" and value < 1:
                problems.append(f"{name} must be >= 1, got {value}")
            if name == "SHADOWPRICE_SEED" and not 0 <= value < 2**64:
                problems.append(f"{name} must fit in an unsigned 64-bit integer")

        if self.log_level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            problems.append(f"LOG_LEVEL {self.log_level!r} is not a logging level")

        return problems
