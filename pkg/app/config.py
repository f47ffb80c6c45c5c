import logging
import os
from pathlib import Path

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _get_int_env(name: str, default: int, min_val: int = 1, max_val: int = 86400) -> int:
    """
    Get integer environment variable with bounds checking.

    Args:
        name: Environment variable name
        default: Default value if not set
        min_val: Minimum allowed value
        max_val: Maximum allowed value

    Returns:
        Validated integer value

    Raises:
        ValueError: If value is out of bounds
    """
    try:
        value = int(os.getenv(name, str(default)))
        if value < min_val or value > max_val:
            raise ValueError(f"{name} must be between {min_val} and {max_val}, got {value}")
        return value
    except ValueError as e:
        raise ValueError(f"Invalid {name}: {e}")


def _get_float_env(name: str, default: float, min_val: float, max_val: float) -> float:
    """Float counterpart of _get_int_env."""
    try:
        value = float(os.getenv(name, repr(default)))
        if not (min_val <= value <= max_val):
            raise ValueError(f"{name} must be between {min_val} and {max_val}, got {value}")
        return value
    except ValueError as e:
        raise ValueError(f"Invalid {name}: {e}")


class Config:
    """Application configuration"""

    # Server settings
    HOST: str = os.getenv("HOST", "127.0.0.1")
    PORT: int = _get_int_env("PORT", 8000, min_val=1, max_val=65535)

    # CORS settings - comma-separated list of allowed origins
    ALLOWED_ORIGINS: list[str] = [
        origin.strip() for origin in os.getenv("ALLOWED_ORIGINS", "http://localhost:8000").split(",") if origin.strip()
    ]

    # Synthetic-data cache
    CACHE_DIR: Path = Path(os.getenv("CACHE_DIR", "./cache"))
    CACHE_ENABLED: bool = os.getenv("CACHE_ENABLED", "true").lower() == "true"

    # Concurrency: process pool for study trials, concurrent HTTP solves
    MAX_WORKERS: int = _get_int_env("MAX_WORKERS", 1, min_val=1, max_val=64)
    MAX_CONCURRENT_SOLVES: int = _get_int_env("MAX_CONCURRENT_SOLVES", 2, min_val=1, max_val=16)

    # Newton iteration of the forward solver
    NEWTON_TOL: float = _get_float_env("NEWTON_TOL", 1e-10, min_val=1e-16, max_val=1e-2)
    NEWTON_MAX_ITER: int = _get_int_env("NEWTON_MAX_ITER", 25, min_val=1, max_val=500)

    # Relative pivot threshold of the block tridiagonal solver
    PIVOT_TOL: float = _get_float_env("PIVOT_TOL", 1e-14, min_val=0.0, max_val=1e-3)

    # Admissible interval U_ad for delta1
    DELTA1_LOWER: float = _get_float_env("DELTA1_LOWER", 0.0, min_val=0.0, max_val=1e6)
    DELTA1_UPPER: float = _get_float_env("DELTA1_UPPER", 20.0, min_val=0.0, max_val=1e6)

    # Discretization defaults (nod nodes on [0, 1], step tau up to t_final)
    DEFAULT_NOD: int = _get_int_env("DEFAULT_NOD", 201, min_val=3, max_val=20001)
    DEFAULT_TAU: float = _get_float_env("DEFAULT_TAU", 0.5, min_val=1e-6, max_val=1e3)
    DEFAULT_T_FINAL: float = _get_float_env("DEFAULT_T_FINAL", 20.0, min_val=1e-6, max_val=1e6)
    DEFAULT_FRONT_WIDTH: float = _get_float_env("DEFAULT_FRONT_WIDTH", 0.1, min_val=1e-6, max_val=1.0)

    # Seed of the noise generator when none is given
    DEFAULT_SEED: int = _get_int_env("DEFAULT_SEED", 20240601, min_val=0, max_val=2**62)

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    @classmethod
    def bounds(cls) -> tuple[float, float]:
        """Admissible interval for delta1 as (lo, hi)"""
        if cls.DELTA1_LOWER >= cls.DELTA1_UPPER:
            raise ValueError(
                f"DELTA1_LOWER must be below DELTA1_UPPER, got {cls.DELTA1_LOWER} >= {cls.DELTA1_UPPER}"
            )
        return cls.DELTA1_LOWER, cls.DELTA1_UPPER

    @classmethod
    def initialize(cls):
        """Create the synthetic-data cache directory when caching is on"""
        if cls.CACHE_ENABLED:
            cls.CACHE_DIR.mkdir(parents=True, exist_ok=True)

    @classmethod
    def setup_logging(cls):
        """Root logger for the entry points (HTTP app and CLI)"""
        logging.basicConfig(
            level=getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO),
            format=LOG_FORMAT,
        )


config = Config()
