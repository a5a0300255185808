"""Named acceptance checks run by `verify-all`."""

from collections.abc import Callable, Iterable

import numpy as np
import structlog

from fastdiff.core.lab import Laboratory
from fastdiff.core.nonlinearity import truncation_lipschitz
from fastdiff.core.semiflow import (
    PICARD_AGREEMENT,
    lipschitz_R,
    lipschitz_scaling,
    picard_cross_check,
    separated_datum,
    smooth_samples,
    solve_original_w,
)
from fastdiff.core.stationary import boundary_comparability, half_length_identity
from fastdiff.exceptions import ConfigurationError, FastDiffError
from fastdiff.schemas import CheckResult, DomainKind, VerifySummary

logger = structlog.get_logger()

CheckFn = Callable[[Laboratory], CheckResult]

CHECKS: dict[str, CheckFn] = {}

SELF_ADJOINT_PAIRS = 100
SMOOTH_MODES = 6
CROSS_VALIDATION_DATA = 10
STABLE_CHARACTERIZATION_POINTS = 3
ROBUSTNESS_NODES = 801
LAMBDA2_SHIFT = 1e-3


def check(name: str) -> Callable[[CheckFn], CheckFn]:
    """Register a check under `name`, in definition order."""

    def register(fn: CheckFn) -> CheckFn:
        CHECKS[name] = fn
        return fn

    return register


def _result(name: str, passed: bool, detail: str = "", **measured: float) -> CheckResult:
    return CheckResult(
        name=name,
        passed=bool(passed),
        measured={key: float(value) for key, value in measured.items()},
        detail=detail,
    )


def _smooth_pairs(lab: Laboratory, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Random cosine series on [0, 1], two independent batches of `count` columns."""
    rng = lab.rng(2)
    x = lab.grid.x
    basis = np.cos(np.pi * np.outer(x, np.arange(SMOOTH_MODES)))
    coefficients = rng.standard_normal((SMOOTH_MODES, 2 * count))
    fields = basis @ coefficients
    return fields[:, :count], fields[:, count:]


# =============================================================================
# Spectral structure
# =============================================================================


@check("structural_eigenpair")
def structural_eigenpair(lab: Laboratory) -> CheckResult:
    p = lab.settings.p
    ones = np.ones(lab.grid.n)
    action = float(np.max(np.abs(lab.assembly.apply_L(ones) - (1.0 - p) * ones)))
    lambda_error = abs(float(lab.decomp.eigenvalues[0]) - (1.0 - p))
    phi_1 = lab.decomp.eigenfields[:, 0]
    flatness = float(np.ptp(phi_1) / np.max(np.abs(phi_1)))
    return _result(
        "structural_eigenpair",
        action <= 1e-12 and lambda_error <= 1e-10 and flatness <= 1e-10,
        action_defect=action,
        lambda_1_error=lambda_error,
        phi_1_flatness=flatness,
    )


@check("self_adjointness")
def self_adjointness(lab: Laboratory) -> CheckResult:
    op = lab.assembly
    u, v = _smooth_pairs(lab, SELF_ADJOINT_PAIRS)
    left = op.mass @ (op.apply_L(u) * v)
    right = op.mass @ (u * op.apply_L(v))
    scale = op.norm(u) * op.norm(v)
    defect = float(np.max(np.abs(left - right) / scale))
    return _result("self_adjointness", defect <= 1e-10, relative_defect=defect)


@check("stationary_oracle")
def stationary_oracle(lab: Laboratory) -> CheckResult:
    state = lab.state
    c_low, c_high = boundary_comparability(state)
    comparable = 0.0 < c_low <= c_high < np.inf
    measured = {"residual": state.residual, "c_low": c_low, "c_high": c_high}
    if lab.grid.kind is not DomainKind.INTERVAL:
        return _result(
            "stationary_oracle",
            comparable and state.residual <= lab.settings.stationary_tol,
            detail="half-length identity applies to the interval only",
            **measured,
        )
    half = half_length_identity(state)
    return _result(
        "stationary_oracle",
        comparable and abs(half - 0.5) <= 1e-4,
        half_length=half,
        **measured,
    )


@check("gap_ladder")
def gap_ladder(lab: Laboratory) -> CheckResult:
    gap = lab.gap
    return _result(
        "gap_ladder",
        gap.ladder_ordered and gap.k_contr <= gap.target_kcontr + 1e-12 and gap.k_contr < 1.0,
        eps_gap=gap.eps_gap,
        k_contr=gap.k_contr,
        lambda_minus=gap.lambda_minus,
        big_lambda_s=gap.big_lambda_s,
        big_lambda_minus=gap.big_lambda_minus,
        big_lambda_c=gap.big_lambda_c,
        big_lambda_max=gap.big_lambda_max,
        big_lambda_plus=gap.big_lambda_plus,
    )


# =============================================================================
# Semiflow
# =============================================================================


@check("truncation_equivalence")
def truncation_equivalence(lab: Laboratory) -> CheckResult:
    eps = lab.settings.eps
    h0 = smooth_samples(lab.decomp, lab.rng(5), 1, 0.2 * eps)[:, 0]
    every = lab.settings.record_every
    truncated = lab.semiflow.trajectory(h0, 1.0, every)
    plain = lab.semiflow.with_truncation(False).trajectory(h0, 1.0, every)
    difference = float(np.max(np.abs(truncated.snapshots - plain.snapshots)))
    small = float(max(np.max(plain.norm_inf), np.max(plain.sup_vgrad)))
    return _result(
        "truncation_equivalence",
        difference <= 1e-10 and small <= eps,
        max_difference=difference,
        max_size=small,
    )


@check("remainder_contraction")
def remainder_contraction(lab: Laboratory) -> CheckResult:
    semiflow = lab.semiflow
    at_zero = float(np.max(np.abs(semiflow.remainder_R(np.zeros(lab.grid.n)))))
    estimate = lipschitz_R(semiflow, lab.rng(6), lab.settings.random_pairs)
    slope, _ = lipschitz_scaling(semiflow, lab.rng(7))
    source = truncation_lipschitz(lab.rng(13), lab.settings.eps, lab.settings.p)
    return _result(
        "remainder_contraction",
        at_zero == 0.0
        and estimate.lipschitz < lab.gap.eps_gap
        and 0.7 <= slope <= 1.3
        and source.lipschitz <= source.reference * (1.0 + 1e-9),
        R_at_zero=at_zero,
        lipschitz=estimate.lipschitz,
        lipschitz_over_eps=estimate.constant,
        eps_gap=lab.gap.eps_gap,
        scaling_slope=slope,
        source_lipschitz=source.lipschitz,
        source_lipschitz_bound=source.reference,
    )


@check("solver_cross_validation")
def solver_cross_validation(lab: Laboratory) -> CheckResult:
    semiflow = lab.semiflow
    count = min(CROSS_VALIDATION_DATA, lab.settings.random_pairs)
    data = smooth_samples(lab.decomp, lab.rng(8), count, 0.5 * lab.settings.eps)
    worst, factor = 0.0, 0.0
    for j in range(count):
        difference, contraction = picard_cross_check(semiflow, data[:, j])
        worst = max(worst, difference)
        factor = max(factor, contraction)
    return _result(
        "solver_cross_validation",
        worst <= PICARD_AGREEMENT,
        max_difference=worst,
        picard_contraction=factor,
    )


# =============================================================================
# Invariant manifolds
# =============================================================================


@check("center_manifold_fixed_point")
def center_manifold_fixed_point(lab: Laboratory) -> CheckResult:
    manifolds = lab.manifolds
    tol = manifolds.tol
    coordinates = manifolds.sample_center(lab.rng(9), lab.settings.invariance_points, lab.settings.eps)
    sequence = manifolds.iterate_J(coordinates)
    norms = manifolds.sequence_norm(sequence)
    bounds = np.atleast_1d(manifolds.trinorm(manifolds.center_field(coordinates)))
    excess = float(np.max(norms - bounds))
    defect = float(np.max(manifolds.orbit_defect(sequence)))
    contraction = sequence.monitor.contraction_factor
    return _result(
        "center_manifold_fixed_point",
        contraction <= lab.gap.k_contr + 0.05 and excess <= 10.0 * tol and defect <= 10.0 * tol,
        contraction_factor=contraction,
        k_contr=lab.gap.k_contr,
        sweeps=sequence.monitor.sweeps,
        norm_excess=excess,
        orbit_defect=defect,
    )


@check("invariance")
def invariance(lab: Laboratory) -> CheckResult:
    manifolds = lab.manifolds
    coordinates = manifolds.sample_center(lab.rng(10), lab.settings.invariance_points, lab.settings.eps)
    report = manifolds.invariance_report(coordinates)
    limit = 10.0 * manifolds.tol
    return _result(
        "invariance",
        report.deviation_t1 <= limit and report.deviation_half <= limit,
        deviation_t1=report.deviation_t1,
        deviation_half=report.deviation_half,
    )


@check("lipschitz_ladder")
def lipschitz_ladder(lab: Laboratory) -> CheckResult:
    manifolds = lab.manifolds
    g = manifolds.shadow_datum()
    ladder = manifolds.lipschitz_ladder(g, lab.rng(11), lab.settings.lipschitz_pairs)
    point = manifolds.foliation_intersect(g)
    converged = point.membership_defect <= 10.0 * manifolds.tol
    return _result(
        "lipschitz_ladder",
        ladder.theta.lipschitz <= ladder.theta.reference
        and ladder.psi.lipschitz <= ladder.psi.reference
        and ladder.sequence.lipschitz <= ladder.sequence.reference
        and ladder.composition_holds
        and converged,
        lip_theta=ladder.theta.lipschitz,
        lip_theta_reference=ladder.theta.reference,
        lip_psi=ladder.psi.lipschitz,
        lip_psi_reference=ladder.psi.reference,
        lip_chi=ladder.chi.lipschitz,
        lip_sequence=ladder.sequence.lipschitz,
        membership_defect=point.membership_defect,
    )


@check("stable_characterization")
def stable_characterization(lab: Laboratory) -> CheckResult:
    manifolds = lab.manifolds
    g = manifolds.shadow_datum()
    members = manifolds.sample_stable(
        lab.rng(12), STABLE_CHARACTERIZATION_POINTS, 0.5 * lab.settings.eps
    )
    margin = -np.inf
    for j in range(members.shape[1]):
        result = manifolds.characterization(g, members[:, j])
        margin = max(margin, result.separation - result.bound)
    return _result(
        "stable_characterization",
        margin <= 10.0 * manifolds.tol,
        max_excess=margin,
    )


@check("shadowing")
def shadowing(lab: Laboratory) -> CheckResult:
    s = lab.settings
    manifolds = lab.manifolds
    datum = manifolds.shadow_datum()
    record = lab.semiflow.with_truncation(False).trajectory(datum, s.shadow_horizon, s.record_every)
    report = manifolds.finite_dim_approx(record, s.shadow_horizon, 0.0, s.fit_window).report
    return _result(
        "shadowing",
        report.passed,
        t0=report.t0,
        fitted_rate=report.fitted_rate,
        lambda_minus=report.lambda_minus,
        r2=report.r2,
    )


# =============================================================================
# Robustness and the original flow
# =============================================================================


@check("grid_robustness")
def grid_robustness(lab: Laboratory) -> CheckResult:
    fine = lab.with_overrides(n=ROBUSTNESS_NODES)
    results = [
        CHECKS[name](fine)
        for name in ("structural_eigenpair", "self_adjointness", "stationary_oracle", "gap_ladder")
    ]
    lambda_2 = float(lab.decomp.eigenvalues[1])
    shift = abs(float(fine.decomp.eigenvalues[1]) - lambda_2) / abs(lambda_2)
    failed = [result.name for result in results if not result.passed]
    return _result(
        "grid_robustness",
        not failed and shift <= LAMBDA2_SHIFT,
        detail=f"failed at n={ROBUSTNESS_NODES}: {', '.join(failed)}" if failed else "",
        lambda_2_relative_shift=shift,
    )


@check("extinction_demo")
def extinction_demo(lab: Laboratory) -> CheckResult:
    s = lab.settings
    w0 = separated_datum(lab.state, s.extinction_time)
    report = solve_original_w(w0, lab.state, s.extinction_dt).report(s.extinction_time)
    return _result(
        "extinction_demo",
        report.relative_time_error <= 0.05
        and report.max_rescaled_deviation <= 1e-2
        and report.mass_monotone,
        relative_time_error=report.relative_time_error,
        max_rescaled_deviation=report.max_rescaled_deviation,
        extinction_time=report.extinction_time,
    )


def run_checks(lab: Laboratory, names: Iterable[str] = ()) -> VerifySummary:
    """Run the named checks (all when empty); numerical failures fail the check.

    Raises:
        ConfigurationError: On an unknown check name.
    """
    selected = list(names) or list(CHECKS)
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in selected:
        try:
            result = CHECKS[name](lab)
        except FastDiffError as exc:
            result = CheckResult(name=name, passed=False, detail=f"{type(exc).__name__}: {exc}")
        logger.info("check_completed", name=name, passed=result.passed, **result.measured)
        results.append(result)
    return VerifySummary(
        config=lab.settings.model_dump(mode="json"),
        checks=results,
        passed=all(result.passed for result in results),
    )
