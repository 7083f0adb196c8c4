"""
Configuration management for NLS Decay Lab.

This module provides centralized configuration for the solver, the numerical
kernels and the experiment runner. Values come from environment variables
(optionally loaded from a ``.env`` file) with documented defaults; experiment
files override them per run.
"""

import os
from dataclasses import dataclass, field
from typing import Optional

from dotenv import load_dotenv


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


@dataclass
class LoggingConfig:
    """Logging configuration settings."""

    level: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))
    format: str = field(
        default_factory=lambda: os.getenv(
            "LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )
    )
    log_file: Optional[str] = field(default_factory=lambda: os.getenv("LOG_FILE", None))
    log_dir: str = field(default_factory=lambda: os.getenv("LOG_DIR", "logs"))
    max_file_size: int = field(
        default_factory=lambda: int(os.getenv("LOG_MAX_FILE_SIZE", "10485760"))  # 10MB
    )
    backup_count: int = field(default_factory=lambda: int(os.getenv("LOG_BACKUP_COUNT", "5")))


@dataclass
class SolverDefaults:
    """Defaults for the split-step integrator and the Duhamel reconstruction."""

    # used when an experiment file leaves solver.dt unset
    dt: float = field(default_factory=lambda: float(os.getenv("SOLVER_DT", "1e-3")))
    dealias_quintic: bool = field(
        default_factory=lambda: _env_bool("SOLVER_DEALIAS_QUINTIC", "True")
    )
    energy_drift_threshold: float = field(
        default_factory=lambda: float(os.getenv("SOLVER_ENERGY_DRIFT_THRESHOLD", "1e-6"))
    )
    # i u_t + Δu = N(u) gives u(t) = e^{itΔ}u0 - i ∫ e^{i(t-s)Δ} N(u(s)) ds
    duhamel_sign: int = field(default_factory=lambda: int(os.getenv("SOLVER_DUHAMEL_SIGN", "-1")))


@dataclass
class NumericsConfig:
    """Settings for FFTs, sup-norm refinement and the wrap-around window."""

    fft_workers: int = field(default_factory=lambda: int(os.getenv("FFT_WORKERS", "1")))
    sup_upsample_factor: int = field(
        default_factory=lambda: int(os.getenv("SUP_UPSAMPLE_FACTOR", "2"))
    )
    spectral_tail_tolerance: float = field(
        default_factory=lambda: float(os.getenv("SPECTRAL_TAIL_TOLERANCE", "1e-10"))
    )
    wrap_width_factor: float = field(
        default_factory=lambda: float(os.getenv("WRAP_WIDTH_FACTOR", "3"))
    )


@dataclass
class RunnerConfig:
    """Experiment runner settings."""

    workers: int = field(default_factory=lambda: int(os.getenv("RUNNER_WORKERS", "1")))
    checkpoint_seconds: float = field(
        default_factory=lambda: float(os.getenv("RUNNER_CHECKPOINT_SECONDS", "300"))
    )
    max_snapshots: int = field(
        default_factory=lambda: int(os.getenv("RUNNER_MAX_SNAPSHOTS", "1000"))
    )
    output_root: str = field(default_factory=lambda: os.getenv("RUNNER_OUTPUT_ROOT", "runs"))


class Config:
    """
    Main configuration class that aggregates all configuration sections.

    Sections read their environment variables when the instance is built.
    """

    def __init__(self):
        self.logging = LoggingConfig()
        self.solver = SolverDefaults()
        self.numerics = NumericsConfig()
        self.runner = RunnerConfig()


# Global configuration instance
_config: Optional[Config] = None


def get_config() -> Config:
    """
    Get or create the global configuration instance.

    A ``.env`` file in the working directory is loaded on first use.

    Returns:
        Global Config instance.
    """
    global _config
    if _config is None:
        load_dotenv()
        _config = Config()
    return _config


def reset_config() -> None:
    """Reset the global configuration instance (useful for testing)."""
    global _config
    _config = None


__all__ = [
    "Config",
    "LoggingConfig",
    "SolverDefaults",
    "NumericsConfig",
    "RunnerConfig",
    "get_config",
    "reset_config",
]
