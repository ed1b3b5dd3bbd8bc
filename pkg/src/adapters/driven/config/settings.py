"""Configuration loading from environment variables and .env files."""

import logging
from pathlib import Path

from dotenv import load_dotenv
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.ports.settings import NumericsPort

__all__ = ["Settings", "load_settings", "ENV_PREFIX"]

load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = "GL_"
_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class Settings(BaseSettings):
    """Runtime configuration of the numerical core and the experiment harness.

    Every field can be overridden with an environment variable named
    ``GL_<FIELD>`` (e.g. ``GL_KKT_TOL=1e-9``).
    """

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, extra="ignore", frozen=True)

    kkt_tol: float = Field(default=1e-7, gt=0, description="KKT residual accepted from group Lasso solves.")
    max_sweeps: int = Field(default=100_000, gt=0, description="Block coordinate descent sweep cap.")
    pattern_rel_tol: float = Field(default=1e-8, gt=0, description="Relative group activity threshold.")
    boundary_tol: float = Field(default=1e-6, gt=0, description="Width of the weak-condition boundary.")
    loading_free_restarts: int = Field(default=50, ge=0, description="Random restarts of the loading-free ascent.")
    sdp_gap_tol: float = Field(default=1e-7, gt=0, description="Relative gap of the cutting-plane SDP.")
    sdp_max_iter: int = Field(default=2_000, gt=0, description="Cutting-plane iteration cap.")
    mc_draws: int = Field(default=100_000, gt=0, description="Monte-Carlo draws for pattern probabilities.")
    mkl_gap_tol: float = Field(default=1e-8, gt=0, description="Relative duality gap of the MKL solver.")
    mkl_max_iter: int = Field(default=10_000, gt=0, description="Alternating MKL iteration cap.")
    mkl_max_n: int = Field(default=5_000, gt=1, description="Largest sample count of the kernel solvers.")
    kappa0: float = Field(default=1.0, gt=0, description="Constant of kappa_n = kappa0 * n^(-1/3).")
    truncation: int = Field(default=30, gt=0, description="Eigenbasis truncation of the Gaussian operators.")
    quadrature_margin: int = Field(default=40, gt=0, description="Extra Gauss-Hermite nodes per axis.")
    max_attempts: int = Field(default=100_000, gt=0, description="Rejection-sampling attempt cap.")
    replications: int = Field(default=50, gt=0, description="Replications per sample size in sweeps.")
    max_workers: int = Field(default=4, gt=0, description="Worker threads of the replication loop.")
    seed: int = Field(default=42, ge=0, description="Root seed of experiments.")
    output_dir: Path = Field(default=Path("results"), description="Directory receiving result files.")
    log_level: str = Field(default="INFO", description="Root log level.")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Accept standard level names in any case.

        Raises:
            ValueError: If the name is not a known level.
        """
        level = v.upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f"log level must be one of {', '.join(_LOG_LEVELS)} (got {v!r})")
        return level

    @field_validator("mkl_gap_tol", "sdp_gap_tol", "kkt_tol")
    @classmethod
    def validate_tolerance(cls, v: float) -> float:
        """Tolerances at or above 1 would accept any point."""
        if v >= 1.0:
            raise ValueError(f"tolerance must be below 1 (got {v})")
        return v

    def to_numerics(self) -> NumericsPort:
        """Project onto the port consumed by the core."""
        return NumericsPort(
            kkt_tol=self.kkt_tol,
            max_sweeps=self.max_sweeps,
            pattern_rel_tol=self.pattern_rel_tol,
            boundary_tol=self.boundary_tol,
            loading_free_restarts=self.loading_free_restarts,
            sdp_gap_tol=self.sdp_gap_tol,
            sdp_max_iter=self.sdp_max_iter,
            mc_draws=self.mc_draws,
            mkl_gap_tol=self.mkl_gap_tol,
            mkl_max_iter=self.mkl_max_iter,
            mkl_max_n=self.mkl_max_n,
            kappa0=self.kappa0,
            truncation=self.truncation,
            quadrature_margin=self.quadrature_margin,
            max_attempts=self.max_attempts,
        )


def load_settings(env_file: str | Path | None = None) -> Settings:
    """Load and validate settings from the environment.

    Args:
        env_file: Optional extra .env file whose values override the process
            environment.

    Returns:
        Validated Settings object.

    Raises:
        RuntimeError: If a GL_* variable is invalid.
        ValueError: If ``env_file`` cannot be read.
    """
    if env_file is not None:
        path = Path(env_file)
        if not path.is_file():
            raise ValueError(f"Settings file not found: {path}")
        load_dotenv(path, override=True)

    try:
        settings = Settings()
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first["loc"] else "?"
        raise RuntimeError(f"Invalid {ENV_PREFIX}{field.upper()}: {first['msg']}") from e

    logger.debug(
        f"Settings loaded: kkt_tol={settings.kkt_tol:g}, boundary_tol={settings.boundary_tol:g}, "
        f"replications={settings.replications}, workers={settings.max_workers}, seed={settings.seed}"
    )
    return settings
