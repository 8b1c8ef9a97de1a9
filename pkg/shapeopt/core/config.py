from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings with environment variable support"""

    model_config = SettingsConfigDict(
        env_prefix="SHAPEOPT_", env_file=".env", case_sensitive=False, extra="ignore"
    )

    # Application settings
    app_name: str = Field(default="shapeopt", description="Application name")
    app_version: str = Field(default="0.3.0", description="Application version")
    debug: bool = Field(default=False, description="Debug mode")

    # Logging settings
    log_level: str = Field(default="INFO", description="Console log level")
    log_dir: str = Field(default="logs", description="Directory for rotating log files")
    log_to_file: bool = Field(default=False, description="Also write rotating log files")

    # Output settings
    output_dir: Optional[str] = Field(
        default=None, description="Overrides output.directory of every run config"
    )

    # Fixed-point solver defaults
    state_tol: float = Field(default=1e-10, gt=0, description="Fixed-point residual tolerance")
    state_max_iter: int = Field(default=20000, ge=1, description="Fixed-point iteration cap")

    # Optimizer defaults
    qp_tol: float = Field(default=1e-9, gt=0, description="QP subproblem KKT tolerance")

    # Verification settings
    fd_step: float = Field(default=1e-5, gt=0, description="Central-difference step for gradient checks")
    verify_state_tol: float = Field(default=1e-13, gt=0, description="Inner tolerance during FD checks")
    verify_seed: int = Field(default=1234, description="Seed for random test vectors")


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()
