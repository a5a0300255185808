"""Command-line interface for the fastdiff laboratory."""

import argparse
import sys
from pathlib import Path

import numpy as np
import structlog

from fastdiff.config import Settings, load_settings
from fastdiff.core.checks import CHECKS, run_checks
from fastdiff.core.export import run_directory, write_frame, write_json
from fastdiff.core.lab import Laboratory
from fastdiff.core.operator import measure_operator_norms
from fastdiff.core.semiflow import (
    PICARD_AGREEMENT,
    grad_bound_monitor,
    lipschitz_R,
    picard_cross_check,
)
from fastdiff.core.stationary import summarize
from fastdiff.exceptions import FastDiffError
from fastdiff.logs import configure_logging
from fastdiff.schemas import Datum, ManifoldSummary, SpectrumSummary

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per experiment."""
    parser = argparse.ArgumentParser(
        description="fastdiff - invariant-manifold laboratory for fast diffusion extinction",
        prog="fdx",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="Random seed (overrides the config)")
    common.add_argument("--out", type=Path, help="Output directory (default: runs)")

    subparsers = parser.add_subparsers(dest="command", help="Available experiments")

    subparsers.add_parser("stationary", parents=[common], help="Solve the Lane-Emden state")

    spectrum_parser = subparsers.add_parser(
        "spectrum", parents=[common], help="Eigenpairs of L and the gap parameters"
    )
    spectrum_parser.add_argument("--K", type=int, dest="cut_index", help="Spectral cut index")

    evolve_parser = subparsers.add_parser(
        "evolve", parents=[common], help="Evolve the relative error from a modal datum"
    )
    evolve_parser.add_argument(
        "--datum", choices=[datum.value for datum in Datum], help="Initial datum family"
    )
    evolve_parser.add_argument(
        "--truncated",
        action="store_true",
        default=None,
        help="Use the truncated nonlinearity",
    )

    subparsers.add_parser(
        "manifold", parents=[common], help="Center manifold, invariance and Lipschitz ladder"
    )
    subparsers.add_parser(
        "shadow", parents=[common], help="Shadow a small trajectory by a center-manifold orbit"
    )

    verify_parser = subparsers.add_parser(
        "verify-all", parents=[common], help="Run the acceptance checks"
    )
    verify_parser.add_argument(
        "--check",
        action="append",
        dest="checks",
        choices=list(CHECKS),
        help="Run only this check (repeatable)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the CLI; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_ERROR

    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config", "out", "checks")
    }
    overrides["out_dir"] = args.out
    overrides["checks"] = getattr(args, "checks", None)

    try:
        settings = load_settings(args.config, **overrides)
    except FastDiffError as exc:
        configure_logging()
        logger.error("configuration_rejected", error=str(exc))
        return EXIT_ERROR

    configure_logging(settings.log_level, settings.log_format)
    out = run_directory(settings.out_dir, args.command)
    logger.info("run_started", command=args.command, seed=settings.seed, out=str(out))
    try:
        if args.command == "stationary":
            return run_stationary(settings, out)
        elif args.command == "spectrum":
            return run_spectrum(settings, out)
        elif args.command == "evolve":
            return run_evolve(settings, out)
        elif args.command == "manifold":
            return run_manifold(settings, out)
        elif args.command == "shadow":
            return run_shadow(settings, out)
        else:
            return run_verify(settings, out)
    except FastDiffError as exc:
        logger.error("run_failed", command=args.command, error_type=type(exc).__name__, error=str(exc))
        return EXIT_ERROR


def run_stationary(settings: Settings, out: Path) -> int:
    """Profile, grid and summary of the stationary state."""
    lab = Laboratory(settings)
    summary = summarize(lab.state)
    write_frame(lab.state.to_frame(), out / "profile.csv")
    write_frame(lab.grid.to_frame(), out / "grid.csv")
    write_json(summary, out / "stationary.json")
    return EXIT_OK if summary.residual <= settings.stationary_tol else EXIT_FAILED


def run_spectrum(settings: Settings, out: Path) -> int:
    """Eigenpairs, measured operator norms and the gap parameters."""
    lab = Laboratory(settings)
    decomp, gap = lab.decomp, lab.gap
    K = gap.cut_index
    ones = np.ones(lab.grid.n)
    gram = decomp.eigenfields.T @ (lab.assembly.mass[:, None] * decomp.eigenfields)
    center_norm, stable_norm = measure_operator_norms(decomp, K, lab.rng(1))
    summary = SpectrumSummary(
        n=lab.grid.n,
        k_max=decomp.k_max,
        lambda_1=float(decomp.eigenvalues[0]),
        lambda_2=float(decomp.eigenvalues[1]),
        constant_mode_defect=float(
            np.max(np.abs(lab.assembly.apply_L(ones) - (1.0 - settings.p) * ones))
        ),
        orthonormality_defect=float(np.max(np.abs(gram - np.eye(decomp.k_max)))),
        max_pair_residual=float(np.max(decomp.pair_residuals())),
        center_inverse_norm=center_norm,
        center_inverse_bound=float(np.exp(gap.lambda_cut)),
        stable_semigroup_norm=stable_norm,
        stable_semigroup_bound=float(np.exp(-gap.lambda_next)),
        gap=gap.report(),
    )
    spectrum, fields = decomp.to_frames()
    write_frame(spectrum, out / "spectrum.csv")
    write_frame(fields, out / "eigenfields.csv")
    write_json(summary.gap, out / "gap.json")
    write_json(summary, out / "spectrum_summary.json")
    if not gap.ladder_ordered:
        logger.error("assertion_failed", name="lambda_ladder_ordered")
        return EXIT_FAILED
    return EXIT_OK


def run_evolve(settings: Settings, out: Path) -> int:
    """Trajectory of the relative error from the configured datum family."""
    lab = Laboratory(settings)
    semiflow = lab.semiflow.with_truncation(settings.truncated)
    record = semiflow.trajectory(
        lab.initial_datum(), settings.horizon, settings.record_every
    )
    gradient_bound = grad_bound_monitor(record, settings.eps)
    picard_difference, _ = picard_cross_check(semiflow, record.snapshots[:, 0])
    summary = record.summary(settings.fit_window).model_copy(
        update={"gradient_bound": gradient_bound, "picard_difference": picard_difference}
    )
    write_frame(record.to_frame(), out / "trajectory.csv")
    write_json(summary, out / "summary.json")

    failed = [
        name
        for name, holds in (
            ("picard_agreement", picard_difference <= PICARD_AGREEMENT),
            (
                "truncation_activity",
                gradient_bound.truncation_inactive
                == (gradient_bound.eps_star_empirical <= settings.eps),
            ),
        )
        if not holds
    ]
    for name in failed:
        logger.error("assertion_failed", name=name)
    return EXIT_FAILED if failed else EXIT_OK


def run_manifold(settings: Settings, out: Path) -> int:
    """J fixed point, invariance and the Lipschitz ladder on sampled center points."""
    lab = Laboratory(settings)
    manifolds = lab.manifolds
    tol = manifolds.tol
    coordinates = manifolds.sample_center(lab.rng(9), settings.invariance_points, settings.eps)
    sequence = manifolds.iterate_J(coordinates)
    bound = float(np.max(manifolds.trinorm(manifolds.center_field(coordinates))))
    orbit_defect = float(np.max(manifolds.orbit_defect(sequence)))
    invariance = manifolds.invariance_report(coordinates)
    ladder = manifolds.lipschitz_ladder(
        manifolds.shadow_datum(), lab.rng(11), settings.lipschitz_pairs
    )
    summary = ManifoldSummary(
        j_iteration=sequence.monitor.report(
            norm=float(np.max(manifolds.sequence_norm(sequence))), bound=bound
        ),
        orbit_defect=orbit_defect,
        invariance=invariance,
        lipschitz=[
            lipschitz_R(lab.semiflow, lab.rng(6), settings.random_pairs),
            ladder.theta,
            ladder.psi,
            ladder.chi,
            ladder.sequence,
        ],
        composition_holds=ladder.composition_holds,
    )
    write_frame(manifolds.dump_frame(coordinates), out / "manifold.csv")
    write_json(summary, out / "manifold.json")

    failed = [
        name
        for name, holds in (
            ("orbit_defect", orbit_defect <= 10.0 * tol),
            ("invariance_t1", invariance.deviation_t1 <= 10.0 * tol),
            ("invariance_half", invariance.deviation_half <= 10.0 * tol),
            ("lipschitz_composition", ladder.composition_holds),
        )
        if not holds
    ]
    for name in failed:
        logger.error("assertion_failed", name=name)
    return EXIT_FAILED if failed else EXIT_OK


def run_shadow(settings: Settings, out: Path) -> int:
    """Finite-dimensional approximation of a small untruncated trajectory."""
    lab = Laboratory(settings)
    manifolds = lab.manifolds
    record = lab.semiflow.with_truncation(False).trajectory(
        manifolds.shadow_datum(), settings.shadow_horizon, settings.record_every
    )
    result = manifolds.finite_dim_approx(
        record, settings.shadow_horizon, 0.0, settings.fit_window
    )
    write_frame(result.to_frame(), out / "shadow.csv")
    write_json(result.report, out / "shadow.json")
    if not result.report.passed:
        logger.error("assertion_failed", name="shadow_decay_rate")
        return EXIT_FAILED
    return EXIT_OK


def run_verify(settings: Settings, out: Path) -> int:
    """Every acceptance check (or the configured subset) with a summary document."""
    summary = run_checks(Laboratory(settings), settings.checks)
    write_json(summary, out / "summary.json")
    for result in summary.checks:
        if not result.passed:
            logger.error("assertion_failed", name=result.name, detail=result.detail)
    return EXIT_OK if summary.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
