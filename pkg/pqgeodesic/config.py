import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from dotenv import load_dotenv

from pqgeodesic.exceptions import ConfigError


@dataclass(frozen=True)
class SolverSettings:
    """Settings handed to the conic solver"""
    tol: float = 1e-8
    max_iter: int = 200
    solvers: Tuple[str, ...] = ("CLARABEL", "SCS")


@dataclass
class Config:
    """Configuration settings for distance computations and the harness commands"""
    solver_tol: float = 1e-8
    max_iter: int = 200
    solvers: Tuple[str, ...] = field(default_factory=lambda: ("CLARABEL", "SCS"))
    eps_area: float = 1e-12  # relative to squared bbox diagonal
    tol_neg: float = 1e-7  # relative to squared bbox diagonal
    max_workers: int = 1
    out_path: str = "./data/results"
    log_file: str = "pipeline.log"
    log_format: str = "text"  # "text" or "json"
    default_levels: int = 3
    continuity_tol: float = 0.05  # per-field distance error, relative to bbox diagonal

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(tol=self.solver_tol, max_iter=self.max_iter, solvers=tuple(self.solvers))

    def with_overrides(self, **overrides) -> "Config":
        """Returns a copy with all non-None overrides applied (command-line flags)"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_env(cls, dotenv_path: Optional[str] = None) -> "Config":
        """
        Builds the configuration from a .env file and the process environment

        Args:
            dotenv_path: Optional explicit .env file, default is the usual lookup

        Returns:
            Config with environment values applied over the defaults
        """
        load_dotenv(dotenv_path)
        defaults = cls()
        solvers = os.getenv("GEO_SOLVERS")
        return cls(
            solver_tol=_env_number("GEO_SOLVER_TOL", defaults.solver_tol, float),
            max_iter=_env_number("GEO_MAX_ITER", defaults.max_iter, int),
            solvers=tuple(s.strip().upper() for s in solvers.split(",") if s.strip()) if solvers else defaults.solvers,
            eps_area=_env_number("GEO_EPS_AREA", defaults.eps_area, float),
            tol_neg=_env_number("GEO_TOL_NEG", defaults.tol_neg, float),
            max_workers=_env_number("GEO_MAX_WORKERS", defaults.max_workers, int),
            out_path=os.getenv("GEO_OUT_PATH", defaults.out_path),
            log_file=os.getenv("GEO_LOG_FILE", defaults.log_file),
            log_format=os.getenv("GEO_LOG_FORMAT", defaults.log_format),
            continuity_tol=_env_number("GEO_CONTINUITY_TOL", defaults.continuity_tol, float),
        )


def _env_number(name: str, default, cast):
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        value = cast(raw)
    except ValueError as e:
        raise ConfigError(f"Environment variable {name}={raw!r} is not a valid {cast.__name__}") from e
    if value <= 0:
        raise ConfigError(f"Environment variable {name} must be positive, got {raw}")
    return value
