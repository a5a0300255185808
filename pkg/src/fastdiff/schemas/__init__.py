"""Pydantic models for run reports and JSON artifacts."""

from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = "1.0"


# =============================================================================
# Enums
# =============================================================================


class DomainKind(str, Enum):
    """Supported computational domains."""

    INTERVAL = "interval"
    RADIAL_BALL = "radial-ball"


class Datum(str, Enum):
    """Initial data families for the `evolve` experiment."""

    STABLE = "stable"
    UNSTABLE = "unstable"
    MIXED = "mixed"


# =============================================================================
# Base Schemas
# =============================================================================


class BaseSchema(BaseModel):
    """Base schema with common configuration."""

    model_config = ConfigDict(from_attributes=True, populate_by_name=True)


class VersionedSchema(BaseSchema):
    """Top-level JSON document carrying the schema version."""

    schema_version: str = SCHEMA_VERSION


# =============================================================================
# Stationary / Spectral Schemas
# =============================================================================


class StationarySummary(VersionedSchema):
    """JSON summary of a solved Lane-Emden state."""

    kind: DomainKind
    dimension: int = Field(..., ge=1)
    n: int = Field(..., ge=5)
    p: float = Field(..., gt=1.0)
    shooting_parameter: float = Field(..., gt=0.0, description="s*: V'(0) or V(0)")
    newton_slope: float = Field(..., description="s* recovered from the Newton state")
    v_max: float = Field(..., gt=0.0)
    residual: float = Field(..., ge=0.0)
    newton_iterations: int = Field(..., ge=0)
    c_low: float = Field(..., gt=0.0)
    c_high: float = Field(..., gt=0.0)
    half_length: float | None = Field(
        default=None, description="Energy quadrature of the half interval (interval only)"
    )


class GapParametersReport(VersionedSchema):
    """Spectral cut, Lambda-ladder and contraction constants."""

    cut_index: int = Field(..., ge=1)
    lambda_1: float
    lambda_cut: float = Field(..., description="lambda_K")
    lambda_next: float = Field(..., description="lambda_{K+1}")
    lambda_plus: float
    lambda_minus: float
    big_lambda_plus: float
    big_lambda_max: float
    big_lambda_c: float
    big_lambda_minus: float
    big_lambda_s: float
    eps_gap: float = Field(..., gt=0.0)
    k_contr: float = Field(..., gt=0.0, lt=1.0)
    ladder_ordered: bool
    lip_sequence_bound: float = Field(..., description="1 / (1 - K_contr)")
    lip_theta_reference: float
    lip_psi_reference: float


class SpectrumSummary(VersionedSchema):
    """Summary of the eigen-decomposition of the linearized operator."""

    n: int
    k_max: int
    lambda_1: float
    lambda_2: float
    constant_mode_defect: float
    orthonormality_defect: float
    max_pair_residual: float
    center_inverse_norm: float
    center_inverse_bound: float
    stable_semigroup_norm: float
    stable_semigroup_bound: float
    gap: GapParametersReport


# =============================================================================
# Dynamics Schemas
# =============================================================================


class GradientBoundReport(BaseSchema):
    """Empirical check of the late-time weighted gradient bound."""

    eps: float
    sup_vgrad_late: float
    holds: bool
    eps_star_empirical: float = Field(
        ..., description="largest max(||h||_inf, ||V grad h||_inf) over the record"
    )
    truncation_inactive: bool


class TrajectorySummary(VersionedSchema):
    """JSON run summary of a recorded trajectory."""

    variable: str
    truncated: bool
    t_final: float
    snapshots: int
    final_norm_p1: float
    max_norm_inf: float
    max_sup_vgrad: float
    truncation_ever_active: bool
    fitted_rate: float | None = None
    r2: float | None = None
    gradient_bound: GradientBoundReport | None = None
    picard_difference: float | None = Field(
        None, description="max |S(h0) by Picard - S(h0) by stepping|"
    )


class ExtinctionReport(VersionedSchema):
    """Extinction demo for the original fast diffusion flow."""

    predicted_time: float
    extinction_time: float
    relative_time_error: float
    max_rescaled_deviation: float
    mass_monotone: bool


class LipschitzEstimate(BaseSchema):
    """Sampled Lipschitz constant of a map, with its natural scale."""

    name: str
    samples: int = Field(..., ge=1)
    lipschitz: float = Field(..., ge=0.0)
    scale: float = Field(..., gt=0.0)
    constant: float = Field(..., ge=0.0, description="lipschitz / scale")
    reference: float | None = None


class FixedPointReport(BaseSchema):
    """Convergence record of a sequence-space fixed-point iteration."""

    name: str
    sweeps: int
    contraction_factor: float
    final_increment: float
    norm: float
    bound: float


class InvarianceReport(BaseSchema):
    """Deviation of the pushed-forward center manifold from itself."""

    points: int
    deviation_t1: float
    deviation_half: float
    tol: float


class ManifoldSummary(VersionedSchema):
    """Center-manifold run: J fixed point, invariance and Lipschitz ladder."""

    j_iteration: FixedPointReport
    orbit_defect: float
    invariance: InvarianceReport
    lipschitz: list[LipschitzEstimate]
    composition_holds: bool


class ShadowReport(VersionedSchema):
    """Finite-dimensional shadowing run."""

    t0: float
    lambda_minus: float
    fitted_rate: float
    prefactor: float
    r2: float
    window: float
    tol: float
    passed: bool


# =============================================================================
# Verification Schemas
# =============================================================================


class CheckResult(BaseSchema):
    """Outcome of one named acceptance check."""

    name: str
    passed: bool
    measured: dict[str, float] = Field(default_factory=dict)
    detail: str = ""


class VerifySummary(VersionedSchema):
    """The `verify-all` summary document."""

    config: dict[str, Any]
    checks: list[CheckResult]
    passed: bool