"""Center manifold, stable foliation and shadowing for the time-one map S.

Sequences are stored as arrays of shape (n, W, P): nodes, window index and
independent points. All fixed points run in the tri-norm
max(||P_c h||, ||P_s h||) with the weighted sequence norms of the gap
parameters.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import pandas as pd
import structlog
from numpy.typing import NDArray

from fastdiff.core.fixed_point import STALL_LEVEL, ConvergenceMonitor, relative_change
from fastdiff.core.grid import Array
from fastdiff.core.operator import GapParameters, SpectralDecomposition
from fastdiff.core.semiflow import TrajectoryRecord, TruncatedSemiflow, fit_decay_rate
from fastdiff.exceptions import (
    ConfigurationError,
    ConvergenceError,
    NonContractionError,
    SmallnessError,
)
from fastdiff.schemas import InvarianceReport, LipschitzEstimate, ShadowReport

logger = structlog.get_logger()

MIN_WINDOW = 5
MAX_SWEEPS = 200
MAX_CHI = 100
DIVERGENCE_FACTOR = 10.0
DUMP_NODES = 9


@dataclass(frozen=True, eq=False)
class OrbitSequence:
    """A window of an orbit {h_k}, k in `indices`, for one or more points."""

    indices: NDArray[np.intp]
    fields: Array
    weights: Array
    monitor: ConvergenceMonitor

    def at(self, k: int) -> Array:
        """Slice h_k, shape (n, P)."""
        return self.fields[:, k - int(self.indices[0]), :]


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """h = h_c + h_s with center coordinates in the phi_1..phi_K basis."""

    coordinates: Array
    center: Array
    stable: Array
    membership_defect: float = 0.0

    @property
    def field(self) -> Array:
        return self.center + self.stable


@dataclass(frozen=True, eq=False)
class StableCharacterization:
    """Weighted separation profile Lambda_-^{-k} |||S^k(g) - S^k(g~)|||."""

    profile: Array
    separation: float
    bound: float


@dataclass(frozen=True, eq=False)
class LipschitzLadder:
    """Sampled Lipschitz constants of theta, psi_g and chi and the sequence map."""

    theta: LipschitzEstimate
    psi: LipschitzEstimate
    chi: LipschitzEstimate
    sequence: LipschitzEstimate

    @property
    def composition_holds(self) -> bool:
        return self.chi.lipschitz <= self.theta.lipschitz * self.psi.lipschitz


@dataclass(frozen=True, eq=False)
class ShadowResult:
    """Shadow point, the difference series and the shadowing report."""

    point: ManifoldPoint
    times: Array
    difference: Array
    report: ShadowReport

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "difference": self.difference})


@dataclass(frozen=True, eq=False)
class InvariantManifolds:
    """Fixed-point constructions on top of a truncated semiflow."""

    semiflow: TruncatedSemiflow
    gap: GapParameters
    window_j: int = 6
    window_i: int = 8
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if min(self.window_j, self.window_i) < MIN_WINDOW:
            raise ConfigurationError(f"sequence windows must be at least {MIN_WINDOW}")
        if not self.semiflow.truncated:
            raise ConfigurationError("manifolds are built from the truncated time-one map")
        self.decomp.check_cut(self.gap.cut_index)

    @property
    def decomp(self) -> SpectralDecomposition:
        return self.semiflow.decomp

    @property
    def K(self) -> int:
        return self.gap.cut_index

    @property
    def n(self) -> int:
        return self.decomp.assembly.grid.n

    # -------------------------------------------------------------------------
    # Field helpers
    # -------------------------------------------------------------------------

    def _apply(self, fn: Callable[[Array], Array], fields: Array) -> Array:
        """Apply a column-wise map to an (n, W, P) stack."""
        return fn(fields.reshape(self.n, -1)).reshape(fields.shape)

    def _center(self, fields: Array) -> Array:
        return self._apply(lambda h: self.decomp.project(self.K, h)[0], fields)

    def _center_inverse(self, fields: Array) -> Array:
        return self._apply(lambda h: self.decomp.center_inverse(self.K, h), fields)

    def _map(self, fields: Array) -> Array:
        return self._apply(self.semiflow.time_one_map, fields)

    def _trinorms(self, fields: Array) -> Array:
        """Tri-norm of every slice, shape (W, P)."""
        values = np.atleast_1d(self.decomp.trinorm(self.K, fields.reshape(self.n, -1)))
        return values.reshape(fields.shape[1:])

    def trinorm(self, h: Array) -> Array | float:
        """max(||P_c h||, ||P_s h||)."""
        return self.decomp.trinorm(self.K, h)

    def center_field(self, coordinates: Array) -> Array:
        """Fields sum_k c_k phi_k, shape (n, P)."""
        return self.decomp.center(self.K, np.asarray(coordinates, dtype=float).reshape(self.K, -1))

    def sample_center(self, rng: np.random.Generator, count: int, amplitude: float) -> Array:
        """Random center coordinates (K, count) whose fields stay below `amplitude` in sup norm."""
        peaks = np.max(np.abs(self.decomp.eigenfields[:, : self.K]), axis=0)
        return amplitude * rng.uniform(-1.0, 1.0, (self.K, count)) / (self.K * peaks[:, None])

    def sample_stable(self, rng: np.random.Generator, count: int, amplitude: float) -> Array:
        """Random smooth fields in E_s (leading stable modes) below `amplitude` in sup norm."""
        modes = slice(self.K, min(self.K + 4, self.decomp.k_max))
        width = modes.stop - modes.start
        coefficients = rng.uniform(-1.0, 1.0, (width, count))
        fields = self.decomp.eigenfields[:, modes] @ coefficients
        return fields * (amplitude / np.max(np.abs(fields), axis=0))

    # -------------------------------------------------------------------------
    # Center manifold
    # -------------------------------------------------------------------------

    def iterate_J(self, coordinates: Array, tol: float | None = None) -> OrbitSequence:
        """Fixed point of the sequence map J(h_c, .) on k in [-M, M], seeded at zero.

        k >= 1: S(h_{k-1}); k = 0: P_s S(h_{-1}) + h_c;
        k <= -1: P_s S(h_{k-1}) + L_c^{-1} P_c(h_{k+1} - R(h_k)), with h_{-M-1} = 0.

        Raises:
            ConvergenceError: After 200 sweeps, or when the sequence norm exceeds
                ten times |||h_c|||.
        """
        tol = self.tol if tol is None else tol
        h_c = self.center_field(coordinates)
        points = h_c.shape[1]
        M = self.window_j
        indices = np.arange(-M, M + 1)
        weights = self.gap.forward_weight(indices)
        bound = np.atleast_1d(self.trinorm(h_c))

        seq = np.zeros((self.n, 2 * M + 1, points))
        monitor = ConvergenceMonitor("j_iteration", tol=tol, max_sweeps=MAX_SWEEPS)
        while True:
            images = self._map(seq[:, :-1])
            previous = np.concatenate((np.zeros((self.n, 1, points)), images[:, :M]), axis=1)
            stable_previous = previous - self._center(previous)

            new = np.empty_like(seq)
            new[:, M + 1 :] = images[:, M:]
            new[:, M] = stable_previous[:, M] + h_c
            forcing = seq[:, 1 : M + 1] - images[:, :M]
            new[:, :M] = (
                stable_previous[:, :M]
                + self._center_inverse(forcing)
                + self._center(seq[:, :M])
            )

            change = self._trinorms(new - seq)
            size = self._trinorms(new)
            seq = new
            norm = np.max(weights[:, None] * size, axis=0)
            if np.any((norm > DIVERGENCE_FACTOR * bound) & (bound > 0.0)):
                raise ConvergenceError(
                    "j_iteration diverged past ten times |||h_c|||",
                    iterations=monitor.sweeps + 1,
                    contraction_factor=monitor.contraction_factor,
                )
            increment = float(np.max(weights[:, None] * change))
            if monitor.update(increment, relative_change(change, size)):
                break
        return OrbitSequence(indices=indices, fields=seq, weights=weights, monitor=monitor)

    def sequence_norm(self, sequence: OrbitSequence) -> Array:
        """Weighted sup of tri-norms, one value per point."""
        return np.max(sequence.weights[:, None] * self._trinorms(sequence.fields), axis=0)

    def orbit_defect(self, sequence: OrbitSequence) -> Array:
        """Weighted |||S(h_{k-1}) - h_k||| for the window-interior k > -M."""
        images = self._map(sequence.fields[:, :-1])
        defect = self._trinorms(images - sequence.fields[:, 1:])
        return sequence.weights[1:, None] * defect

    def theta(self, coordinates: Array, tol: float | None = None) -> Array:
        """theta(h_c) = P_s of the zero slice of the J fixed point."""
        h0 = self.iterate_J(coordinates, tol).at(0)
        out = h0 - self.decomp.project(self.K, h0)[0]
        return out[:, 0] if np.ndim(coordinates) == 1 else out

    def manifold_point(self, coordinates: Array, tol: float | None = None) -> ManifoldPoint:
        coordinates = np.asarray(coordinates, dtype=float)
        return ManifoldPoint(
            coordinates=coordinates,
            center=self.center_field(coordinates)[:, 0],
            stable=self.theta(coordinates.reshape(self.K), tol),
        )

    def invariance_check(self, coordinates: Array, t: float = 1.0) -> float:
        """max |||P_s S_t(z) - theta(P_c S_t(z))||| over z = h_c + theta(h_c)."""
        coordinates = np.asarray(coordinates, dtype=float).reshape(self.K, -1)
        z = self.center_field(coordinates) + self.theta(coordinates)
        image = self.semiflow.flow(z, t)
        image_stable = self.decomp.project(self.K, image)[1]
        moved = self.decomp.center_coordinates(self.K, image)
        deviation = np.atleast_1d(self.trinorm(image_stable - self.theta(moved)))
        return float(np.max(deviation))

    def invariance_report(self, coordinates: Array) -> InvarianceReport:
        report = InvarianceReport(
            points=int(np.asarray(coordinates).reshape(self.K, -1).shape[1]),
            deviation_t1=self.invariance_check(coordinates, 1.0),
            deviation_half=self.invariance_check(coordinates, 0.5),
            tol=self.tol,
        )
        logger.info(
            "invariance_checked",
            points=report.points,
            deviation_t1=report.deviation_t1,
            deviation_half=report.deviation_half,
        )
        return report

    # -------------------------------------------------------------------------
    # Stable foliation
    # -------------------------------------------------------------------------

    def base_orbit(self, g: Array) -> Array:
        """S^k(g) for k = 0..M+1, shape (n, M+2)."""
        orbit = np.empty((self.n, self.window_i + 2))
        orbit[:, 0] = g
        for k in range(1, self.window_i + 2):
            orbit[:, k] = self.semiflow.time_one_map(orbit[:, k - 1])
        return orbit

    def iterate_I(
        self,
        g: Array,
        g_s: Array,
        orbit: Array | None = None,
        tol: float | None = None,
    ) -> OrbitSequence:
        """Fixed point h of the shifted map {h_k} -> I(g_s + P_s g, {h_k + S^k g}) - {S^k g}.

        With y = h + S^k(g): y_0 = g_s + P_s g + L_c^{-1} P_c(y_1 - R(y_0)),
        y_k = P_s S(y_{k-1}) + L_c^{-1} P_c(y_{k+1} - R(y_k)) for k >= 1 and
        the closure h_{M+1} = 0.

        Raises:
            ConvergenceError: After 200 sweeps or past ten times |||g_s|||.
        """
        tol = self.tol if tol is None else tol
        M = self.window_i
        orbit = self.base_orbit(g) if orbit is None else orbit
        g_s = np.asarray(g_s, dtype=float).reshape(self.n, -1)
        points = g_s.shape[1]
        indices = np.arange(0, M + 1)
        weights = self.gap.stable_weight(indices)
        bound = np.atleast_1d(self.trinorm(g_s))
        stable_g = orbit[:, 0] - self.decomp.project(self.K, orbit[:, 0])[0]
        base = np.repeat(orbit[:, : M + 1, None], points, axis=2)
        closure = np.repeat(orbit[:, M + 1 : M + 2, None], points, axis=2)

        h = np.zeros((self.n, M + 1, points))
        monitor = ConvergenceMonitor("i_iteration", tol=tol, max_sweeps=MAX_SWEEPS)
        while True:
            y = h + base
            following = np.concatenate((y[:, 1:], closure), axis=1)
            images = self._map(y)
            center = self._center_inverse(following - images) + self._center(y)

            new_y = np.empty_like(y)
            new_y[:, 0] = g_s + stable_g[:, None] + center[:, 0]
            new_y[:, 1:] = images[:, :-1] - self._center(images[:, :-1]) + center[:, 1:]
            new = new_y - base

            change = self._trinorms(new - h)
            h = new
            norm = np.max(weights[:, None] * self._trinorms(h), axis=0)
            if np.any((norm > DIVERGENCE_FACTOR * bound) & (bound > 0.0)):
                raise ConvergenceError(
                    "i_iteration diverged past ten times |||g_s|||",
                    iterations=monitor.sweeps + 1,
                    contraction_factor=monitor.contraction_factor,
                )
            increment = float(np.max(weights[:, None] * change))
            if monitor.update(increment, relative_change(change, self._trinorms(new_y))):
                break
        return OrbitSequence(indices=indices, fields=h, weights=weights, monitor=monitor)

    def psi(
        self,
        g: Array,
        g_s: Array,
        orbit: Array | None = None,
        tol: float | None = None,
    ) -> Array:
        """psi_g(g_s) = P_c of the zero slice of the I fixed point."""
        h0 = self.iterate_I(g, g_s, orbit, tol).at(0)
        out = self.decomp.project(self.K, h0)[0]
        return out[:, 0] if np.ndim(g_s) == 1 else out

    def characterization(
        self, g: Array, g_s: Array, tol: float = 0.0
    ) -> StableCharacterization:
        """Separation of the orbits of g and g~ = g + g_s + psi_g(g_s).

        Run with tol = 0 by default: unstable modes amplify any residual of g~.
        """
        orbit = self.base_orbit(g)
        h0 = self.iterate_I(g, g_s, orbit, tol).at(0)[:, 0]
        other = np.empty_like(orbit[:, : self.window_i + 1])
        other[:, 0] = g + h0
        for k in range(1, self.window_i + 1):
            other[:, k] = self.semiflow.time_one_map(other[:, k - 1])
        separation = np.atleast_1d(self.trinorm(orbit[:, : self.window_i + 1] - other))
        profile = self.gap.stable_weight(np.arange(self.window_i + 1)) * separation
        return StableCharacterization(
            profile=profile,
            separation=float(np.max(profile)),
            bound=float(self.trinorm(g_s)),
        )

    def chi(
        self, g: Array, q_s: Array, orbit: Array, tol: float | None = None
    ) -> tuple[Array, Array, Array]:
        """chi(q_s) = theta(psi_g(q_s - P_s g) + P_c g).

        Returns:
            (chi(q_s), psi_g(q_s - P_s g), q_c) column-wise.
        """
        q_s = np.asarray(q_s, dtype=float).reshape(self.n, -1)
        g_c, g_stable = self.decomp.project(self.K, g)
        psi = self.psi(g, q_s - g_stable[:, None], orbit, tol).reshape(self.n, -1)
        q_c = psi + g_c[:, None]
        return self.theta(self.decomp.center_coordinates(self.K, q_c), tol), psi, q_c

    def foliation_intersect(self, g: Array, tol: float | None = None) -> ManifoldPoint:
        """Unique intersection of the leaf through g with the center manifold.

        Raises:
            NonContractionError: If successive chi increments stop contracting
                above the rounding level.
        """
        tol = self.tol if tol is None else tol
        orbit = self.base_orbit(g)
        q_s = self.decomp.project(self.K, g)[1][:, None]
        monitor = ConvergenceMonitor("chi_iteration", tol=tol, max_sweeps=MAX_CHI)
        while True:
            image, _, q_c = self.chi(g, q_s, orbit, tol)
            change = np.atleast_1d(self.trinorm(image - q_s))
            q_s = image
            relative = relative_change(change, np.atleast_1d(self.trinorm(image)))
            if monitor.update(float(change[0]), relative):
                break
            if (
                monitor.sweeps >= 2
                and monitor.increments[-1] >= monitor.increments[-2]
                and relative > STALL_LEVEL
            ):
                factor = monitor.increments[-1] / monitor.increments[-2]
                raise NonContractionError(
                    f"chi does not contract (factor {factor:.3f}); eps_gap too large",
                    factor=factor,
                )
        point = ManifoldPoint(
            coordinates=self.decomp.center_coordinates(self.K, q_c)[:, 0],
            center=q_c[:, 0],
            stable=q_s[:, 0],
            membership_defect=monitor.final_increment,
        )
        logger.info(
            "foliation_intersected",
            sweeps=monitor.sweeps,
            membership_defect=point.membership_defect,
        )
        return point

    # -------------------------------------------------------------------------
    # Measurements
    # -------------------------------------------------------------------------

    def lipschitz_ladder(
        self,
        g: Array,
        rng: np.random.Generator,
        pairs: int = 4,
        amplitude: float = 0.02,
    ) -> LipschitzLadder:
        """Sampled Lip(theta), Lip(psi_g), Lip(chi) and the sequence-level Lip(Theta).

        theta is sampled on its own pairs of center points, psi_g and chi on
        pairs of stable points q_s around P_s g. chi is measured end to end,
        |||chi(q_s) - chi(q_s~)||| / |||q_s - q_s~|||, so the composition bound
        compares three independent measurements.
        """
        gap = self.gap
        coordinates = self.sample_center(rng, 2 * pairs, amplitude)
        sequence = self.iterate_J(coordinates)
        h0 = sequence.at(0)
        thetas = h0 - self.decomp.project(self.K, h0)[0]
        center_gap = np.atleast_1d(
            self.trinorm(self.center_field(coordinates[:, :pairs] - coordinates[:, pairs:]))
        )
        theta_ratios = np.atleast_1d(self.trinorm(thetas[:, :pairs] - thetas[:, pairs:])) / center_gap
        sequence_gap = np.max(
            sequence.weights[:, None]
            * self._trinorms(sequence.fields[:, :, :pairs] - sequence.fields[:, :, pairs:]),
            axis=0,
        )
        sequence_ratios = sequence_gap / center_gap

        orbit = self.base_orbit(g)
        g_stable = self.decomp.project(self.K, g)[1]
        q_s = g_stable[:, None] + self.sample_stable(rng, 2 * pairs, amplitude)
        images, psis, _ = self.chi(g, q_s, orbit)
        stable_gap = np.atleast_1d(self.trinorm(q_s[:, :pairs] - q_s[:, pairs:]))
        psi_gap = np.atleast_1d(self.trinorm(psis[:, :pairs] - psis[:, pairs:]))
        psi_ratios = psi_gap / stable_gap
        image_gap = np.atleast_1d(self.trinorm(images[:, :pairs] - images[:, pairs:]))
        chi_ratios = image_gap / stable_gap

        def estimate(name: str, values: Array, reference: float | None) -> LipschitzEstimate:
            lipschitz = float(np.max(values))
            return LipschitzEstimate(
                name=name,
                samples=int(values.size),
                lipschitz=lipschitz,
                scale=gap.eps_gap,
                constant=lipschitz / gap.eps_gap,
                reference=reference,
            )

        ladder = LipschitzLadder(
            theta=estimate("theta", theta_ratios, gap.lip_theta_reference),
            psi=estimate("psi", psi_ratios, gap.lip_psi_reference),
            chi=estimate(
                "chi", chi_ratios, gap.lip_theta_reference * gap.lip_psi_reference
            ),
            sequence=estimate("Theta", sequence_ratios, gap.lip_sequence_bound),
        )
        logger.info(
            "lipschitz_ladder_measured",
            theta=ladder.theta.lipschitz,
            psi=ladder.psi.lipschitz,
            chi=ladder.chi.lipschitz,
            sequence=ladder.sequence.lipschitz,
        )
        return ladder

    def dump_frame(self, coordinates: Array) -> pd.DataFrame:
        """One row per center point: coordinates c_k, then theta at evenly spaced nodes."""
        coordinates = np.asarray(coordinates, dtype=float).reshape(self.K, -1)
        thetas = self.theta(coordinates)
        grid = self.decomp.assembly.grid
        nodes = np.unique(np.linspace(0, grid.n - 1, DUMP_NODES).round().astype(int))
        frame = pd.DataFrame(
            {f"c_{k + 1}": coordinates[k] for k in range(self.K)}
        )
        for index in nodes:
            frame[f"theta_x{grid.x[index]:.4f}"] = thetas[index]
        return frame

    # -------------------------------------------------------------------------
    # Shadowing
    # -------------------------------------------------------------------------

    def shadow_datum(
        self, center_coefficient: float = 1e-4, stable_fraction: float = 0.2
    ) -> Array:
        """A point of W_c plus a stable perturbation below stable_fraction * eps.

        The perturbation combines the two leading stable modes and is scaled so
        that both its sup norm and its weighted gradient stay below the cutoff
        plateau.
        """
        eps = self.semiflow.cfg.eps
        coordinates = np.full(self.K, center_coefficient)
        point = self.manifold_point(coordinates)
        modes = self.decomp.eigenfields[:, self.K : self.K + 2]
        perturbation = modes[:, 0] + 0.5 * modes[:, -1]
        op = self.decomp.assembly
        size = max(
            float(np.max(np.abs(perturbation))),
            float(op.grid.sup_weighted_gradient(perturbation, op.V)),
        )
        return point.field + stable_fraction * eps * perturbation / size

    def finite_dim_approx(
        self,
        record: TrajectoryRecord,
        horizon: float = 8.0,
        tol: float = 0.0,
        fit_window: int = 0,
    ) -> ShadowResult:
        """Shadow a small untruncated trajectory by an orbit on the center manifold.

        t0 is the first recorded time from which ||h||_inf <= eps and
        ||V grad h||_inf <= eps hold for the rest of the record.

        Raises:
            SmallnessError: If no such time exists.
        """
        eps = self.semiflow.cfg.eps
        small = (record.norm_inf <= eps) & (record.sup_vgrad <= eps)
        tail_small = np.flip(np.logical_and.accumulate(np.flip(small)))
        if not np.any(tail_small):
            raise SmallnessError("trajectory never satisfies ||h||_inf, ||V grad h||_inf <= eps")
        start = int(np.argmax(tail_small))
        t0 = float(record.times[start])
        point = self.foliation_intersect(record.snapshots[:, start], tol)

        keep = (record.times >= t0) & (record.times <= t0 + horizon + 1e-12)
        times = record.times[keep]
        shadow = point.field
        difference = np.empty(times.size)
        difference[0] = float(self.decomp.norm(record.snapshots[:, start] - shadow))
        for j in range(1, times.size):
            shadow = self.semiflow.flow(shadow, float(times[j] - times[j - 1]))
            difference[j] = float(self.decomp.norm(record.snapshots[:, start + j] - shadow))

        lambda_minus = self.gap.lambda_minus
        rate, r2 = fit_decay_rate(times - t0, difference, fit_window)
        prefactor = float(np.max(difference * np.exp(lambda_minus * (times - t0))))
        report = ShadowReport(
            t0=t0,
            lambda_minus=lambda_minus,
            fitted_rate=rate,
            prefactor=prefactor,
            r2=r2,
            window=horizon,
            tol=tol,
            passed=rate >= lambda_minus - 0.05 * abs(lambda_minus),
        )
        logger.info("shadow_fitted", t0=t0, fitted_rate=rate, lambda_minus=lambda_minus)
        return ShadowResult(point=point, times=times, difference=difference, report=report)
