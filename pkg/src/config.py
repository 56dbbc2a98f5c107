"""
Configuration settings for the capsym numerical toolkit.

Library-wide knobs (tolerances, mesh sizes, iteration budgets, log level) are
read from ``CAPSYM_*`` environment variables or a ``.env`` file. Per-experiment
parameters live in :class:`src.models.ExperimentConfig` instead.
"""

import logging
from typing import Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Settings(BaseSettings):
    """Application settings."""

    # Logging / orchestration
    log: str = Field(default="info", description="Log level: error, warn, info or debug")
    jobs: int = Field(default=1, ge=1, description="Default worker pool size")

    # Tolerances for inequality experiments
    c_grid: float = Field(default=2.0, gt=0, description="Grid tolerance constant C_grid")
    tol_floor: float = Field(default=1e-8, gt=0, description="Lower bound of tol(h)")
    rigidity_factor: float = Field(
        default=5.0, gt=0, description="Rigidity flag when |margin| < factor * tol"
    )

    # Rearrangement / quadrature
    quantile_levels: int = Field(default=512, ge=2, description="Default level mesh size")
    rho_mesh_points: int = Field(default=2048, ge=16, description="Radial ODE mesh size")
    quad_rel_tol: float = Field(default=1e-10, gt=0, description="Adaptive quadrature rtol")

    # Eigenvalue solver
    eigen_max_iter: int = Field(default=5000, ge=1)
    eigen_rel_tol: float = Field(default=1e-10, gt=0)
    eigen_window: int = Field(default=20, ge=2)

    # Mixed boundary value problem solver
    bvp_max_iter: int = Field(default=20000, ge=1)
    bvp_residual_tol: float = Field(default=1e-8, gt=0)
    bvp_restarts: int = Field(default=3, ge=0)

    # Linear solves for the drift potential
    cg_rel_tol: float = Field(default=1e-10, gt=0)
    cg_max_iter: int = Field(default=20000, ge=1)

    # Gauge polarity checks
    polarity_fd_step: float = Field(default=1e-6, gt=0)

    # Moser-Trudinger constant convention
    moser_convention: Literal["proposition", "theorem"] = Field(default="proposition")

    model_config = SettingsConfigDict(
        env_prefix="CAPSYM_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("log")
    @classmethod
    def validate_log(cls, value: str) -> str:
        """Accept only the documented log level names."""
        value = value.strip().lower()
        if value not in LOG_LEVELS:
            raise ValueError(f"log must be one of error, warn, info, debug (got {value!r})")
        return value

    @property
    def log_level(self) -> int:
        """Numeric logging level for ``logging.basicConfig``."""
        return LOG_LEVELS[self.log]


# Global settings instance
settings = Settings()
