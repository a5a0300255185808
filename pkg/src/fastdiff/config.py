"""Run configuration using Pydantic Settings."""

import tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from fastdiff.exceptions import ConfigurationError
from fastdiff.schemas import Datum, DomainKind


class Settings(BaseSettings):
    """Experiment settings loaded from a TOML file, FDX_* variables and defaults."""

    model_config = SettingsConfigDict(
        env_prefix="FDX_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Domain Configuration
    kind: DomainKind = DomainKind.INTERVAL
    dimension: int = Field(default=1, ge=1, le=10)
    n: int = Field(default=401, ge=16, le=4001)
    grading: float = Field(default=1.0, ge=1.0, le=4.0)
    p: float = Field(default=2.0, gt=1.0)
    stationary_tol: float = Field(default=1e-9, gt=0.0)

    # Spectral Configuration
    k_max: int = Field(default=40, ge=2)
    cut_index: int = Field(default=1, ge=1)
    target_kcontr: float = Field(default=0.9, gt=0.0, lt=1.0)

    # Truncation / Time Stepping
    eps: float = Field(default=0.05, gt=0.0)
    eps0: float = Field(default=0.05, gt=0.0, lt=0.25)
    dt: float = Field(default=1.0 / 256.0, gt=0.0, le=0.1)
    record_every: int = Field(default=16, ge=1)

    # Fixed-Point Configuration
    window_j: int = Field(default=6, ge=5, le=40)
    window_i: int = Field(default=8, ge=5, le=40)
    tol: float = Field(default=1e-8, gt=0.0, lt=1e-2)

    # Experiments
    datum: Datum = Datum.MIXED
    truncated: bool = False
    amplitude: float = Field(default=1e-3, gt=0.0, le=0.5)
    horizon: float = Field(default=4.0, gt=0.0, le=50.0)
    shadow_horizon: float = Field(default=8.0, gt=0.0, le=20.0)
    fit_window: int = Field(default=0, ge=0, description="trailing points for rate fits; 0 = all")
    random_pairs: int = Field(default=20, ge=1)
    lipschitz_pairs: int = Field(default=4, ge=1)
    invariance_points: int = Field(default=20, ge=1)
    extinction_time: float = Field(default=1.0, gt=0.0)
    extinction_dt: float = Field(default=1e-3, gt=0.0)
    checks: list[str] = Field(default_factory=list)

    # Run Configuration
    seed: int = Field(default=0, ge=0, lt=2**64)
    out_dir: Path = Path("runs")

    # Logging Configuration
    log_level: str = "INFO"
    log_format: Literal["json", "text"] = "text"

    @model_validator(mode="after")
    def check_consistency(self) -> "Settings":
        """Cross-field preconditions of the numerical modules."""
        if self.kind is DomainKind.INTERVAL and self.dimension != 1:
            raise ValueError("kind=interval forces dimension=1")
        if self.dimension >= 3 and self.p >= (self.dimension + 2) / (self.dimension - 2):
            raise ValueError(
                f"p={self.p} is not subcritical for dimension {self.dimension}"
            )
        if self.k_max > self.n - 2:
            raise ValueError(f"k_max={self.k_max} exceeds n - 2 = {self.n - 2}")
        if self.cut_index >= self.k_max:
            raise ValueError(f"cut_index={self.cut_index} must be below k_max={self.k_max}")
        if self.eps > self.eps0:
            raise ValueError(f"eps={self.eps} exceeds the admissibility threshold eps0={self.eps0}")
        if abs(round(1.0 / self.dt) * self.dt - 1.0) > 1e-12:
            raise ValueError(f"dt={self.dt} does not divide the unit time step")
        return self

    @property
    def m(self) -> float:
        """Fast diffusion exponent m = 1/p."""
        return 1.0 / self.p

    @property
    def steps_per_unit(self) -> int:
        """Number of time steps per unit time."""
        return round(1.0 / self.dt)


def _flatten(document: dict[str, Any]) -> dict[str, Any]:
    """Merge TOML sections into one flat key space; section names are ignored."""
    flat: dict[str, Any] = {}
    for key, value in document.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for inner_key, inner_value in items:
            if inner_key in flat:
                raise ConfigurationError(f"duplicate config key: {inner_key}")
            flat[inner_key] = inner_value
    return flat


def build_settings(**values: Any) -> Settings:
    """Validate settings, converting pydantic errors to ConfigurationError."""
    try:
        return Settings(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
            for error in exc.errors()
        )
        raise ConfigurationError(problems) from exc


def load_settings(path: Path | None = None, **overrides: Any) -> Settings:
    """Load settings from a TOML file and apply explicit overrides.

    Args:
        path: Optional TOML file with flat ``key = value`` entries in any sections.
        **overrides: Values taking precedence over the file (e.g. CLI flags).

    Returns:
        Validated settings.

    Raises:
        ConfigurationError: On unreadable files, unknown keys or violated ranges.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                values = _flatten(tomllib.load(handle))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    unknown = sorted(set(values) - set(Settings.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    values.update({key: value for key, value in overrides.items() if value is not None})
    return build_settings(**values)


@lru_cache
def get_settings() -> Settings:
    """Get cached default settings."""
    return Settings()
