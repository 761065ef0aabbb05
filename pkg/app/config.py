"""
Configuration module for the heavy-tail eigenvalue lab.
Handles environment variables and process-level numerical settings.
"""

from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="HTLAB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = "./logs/heavytail_lab.log"

    # Execution
    n_jobs: int = 1

    # Eigensolver
    dense_eigen_threshold: int = 512
    psd_floor: float = 1e-8

    # Linear processes
    truncation_tolerance: float = 1e-10
    max_truncation_lag: int = 5000

    # Analytic side of the noise laws
    bisection_rtol: float = 1e-12
    quadrature_rtol: float = 1e-9

    # Monte Carlo
    min_ld_hits: int = 50
    ld_batch_size: int = 2000
    chain_burn_in: int = 1000
    rc_scale_mc_length: int = 200_000

    # Output
    results_schema: str = "heavytail-lab/results/1"
    tool_version: str = "1.0.0"


# Global settings instance
settings = Settings()
