"""Core configuration management for the equilibrium solver."""

import logging
from pathlib import Path
from typing import TYPE_CHECKING

from pydantic import Field
from pydantic import ValidationInfo
from pydantic import field_validator
from pydantic_settings import BaseSettings
from pydantic_settings import SettingsConfigDict

if TYPE_CHECKING:
    from ..models.scenario import SolverConfig

logger = logging.getLogger(__name__)

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def find_env_file() -> str | None:
    """Find .env file in current directory or parent directories."""
    current_dir = Path.cwd()

    # Check current directory and up to 3 parent directories
    for _ in range(4):
        env_file = current_dir / ".env"
        if env_file.exists():
            logger.debug(f"Found .env file at: {env_file}")
            return str(env_file)
        current_dir = current_dir.parent

    logger.debug(".env file not found, using environment and defaults")
    return None


class Settings(BaseSettings):
    """Application configuration settings.

    Every field can be overridden with an ``MFG_EPI_<FIELD>`` environment
    variable or an entry in a ``.env`` file.
    """

    model_config = SettingsConfigDict(
        env_file=find_env_file(),
        env_file_encoding="utf-8",
        env_prefix="MFG_EPI_",
        case_sensitive=False,
        extra="ignore",
    )

    # Runtime
    threads: int = Field(default=4, description="Upper bound on worker count")
    log_level: str = Field(default="INFO")
    log_file: str | None = Field(default=None)
    output_dir: str = Field(default="runs", description="Default output directory")

    # Solver defaults
    horizon: float = Field(default=100.0, description="Time horizon T")
    dt: float = Field(default=0.1, description="Time step")
    epsilon: float = Field(default=1e-6, description="Fixed-point tolerance")
    max_iters: int = Field(default=500)
    damping: float = Field(default=0.5, description="Relaxation weight delta")
    integrator: str = Field(default="euler")
    vaccination_cap: float = Field(
        default=10.0, description="Upper bound V of the vaccination level"
    )
    lambda_bar: float = Field(default=1.0, description="Upper bound of guidelines")

    # Output
    csv_significant_digits: int = Field(default=9)

    # Validation thresholds
    deviation_tolerance: float = Field(
        default=0.02, description="Allowed sup-norm gap of simulated p(I)"
    )
    stationarity_tolerance: float = Field(default=1e-4)
    nash_tolerance: float = Field(default=1e-6)
    oracle_resolution: float = Field(default=0.005)
    nash_perturbation: float = Field(default=0.05)

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v: int) -> int:
        """Validate the worker cap."""
        if not 1 <= v <= 256:
            raise ValueError("threads must be between 1 and 256")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate the log level name."""
        if v.upper() not in _LOG_LEVELS:
            raise ValueError(f"log_level must be one of {', '.join(_LOG_LEVELS)}")
        return v.upper()

    @field_validator("horizon", "dt", "epsilon", "vaccination_cap", "lambda_bar")
    @classmethod
    def validate_positive(cls, v: float, info: ValidationInfo) -> float:
        """Validate strictly positive numeric settings."""
        if v <= 0:
            raise ValueError(f"{info.field_name} must be greater than 0")
        return v

    @field_validator("damping")
    @classmethod
    def validate_damping(cls, v: float) -> float:
        """Validate the relaxation weight."""
        if not 0.0 < v <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        return v

    @field_validator("integrator")
    @classmethod
    def validate_integrator(cls, v: str) -> str:
        """Validate the integrator name."""
        if v.lower() not in ("euler", "rk4"):
            raise ValueError("integrator must be 'euler' or 'rk4'")
        return v.lower()

    @field_validator("csv_significant_digits")
    @classmethod
    def validate_digits(cls, v: int) -> int:
        """Validate CSV precision."""
        if not 1 <= v <= 17:
            raise ValueError("csv_significant_digits must be between 1 and 17")
        return v

    def solver_defaults(self) -> "SolverConfig":
        """Build the default solver configuration from these settings."""
        from ..models.scenario import SolverConfig
        from ..models.scenario import TimeGrid

        return SolverConfig(
            grid=TimeGrid(horizon=self.horizon, dt=self.dt),
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            damping=self.damping,
            integrator=self.integrator,
            vaccination_cap=self.vaccination_cap,
        )

    def worker_count(self, jobs: int) -> int:
        """Number of workers to use for ``jobs`` independent tasks."""
        return max(1, min(self.threads, jobs))


def create_settings() -> Settings:
    """Create settings instance with proper error handling."""
    try:
        logger.debug("Loading application settings...")
        settings_instance = Settings()
        logger.debug("Settings loaded successfully")
        return settings_instance
    except Exception as e:
        logger.error(f"Failed to load settings: {e}")
        logger.error("Check MFG_EPI_* environment variables and the .env file")
        raise


settings = create_settings()
