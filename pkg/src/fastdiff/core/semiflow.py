"""Time integration of the relative-error flow and the time-one map S = L + R."""

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import pandas as pd
import structlog
from numpy.typing import NDArray
from scipy.linalg import solve_banded
from scipy.stats import linregress

from fastdiff.core.fixed_point import ConvergenceMonitor, relative_change
from fastdiff.core.grid import Array
from fastdiff.core.nonlinearity import (
    TruncationConfig,
    eval_M,
    eval_M_trunc,
    truncation_active,
)
from fastdiff.core.operator import OperatorAssembly, SpectralDecomposition, column
from fastdiff.core.stationary import StationaryState
from fastdiff.exceptions import (
    AdmissibilityError,
    BlowUpError,
    ConfigurationError,
    ConvergenceError,
)
from fastdiff.schemas import (
    DomainKind,
    ExtinctionReport,
    GradientBoundReport,
    LipschitzEstimate,
    TrajectorySummary,
)

logger = structlog.get_logger()

BLOW_UP = 10.0
MAX_DT = 0.1
MAX_PICARD = 100
EXTINCTION_LEVEL = 1e-6
MIN_FIT_POINTS = 5
PICARD_AGREEMENT = 1e-5


def phi1(z: Array) -> Array:
    """(e^z - 1) / z, equal to 1 at z = 0."""
    safe = np.where(z == 0.0, 1.0, z)
    return np.where(z == 0.0, 1.0, np.expm1(z) / safe)


def phi2(z: Array) -> Array:
    """(e^z - 1 - z) / z^2, by its Taylor series for small |z|."""
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    series = 0.5 + z / 6.0 + z**2 / 24.0
    return np.where(small, series, (np.expm1(safe) - safe) / safe**2)


# =============================================================================
# Trajectory records
# =============================================================================


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Snapshots of a run with per-snapshot norms of the relative error h.

    `snapshots` holds the recorded variable (h, or v = V(1 + h) for rescaled
    runs) with one column per time stamp; the norms always refer to h.
    """

    times: Array
    snapshots: Array
    norm_p1: Array
    norm_inf: Array
    sup_vgrad: Array
    trunc_active: NDArray[np.bool_]
    variable: str = "h"
    truncated: bool = False

    def __post_init__(self) -> None:
        if self.snapshots.shape[1] != self.times.shape[0]:
            raise ConfigurationError("snapshot count differs from time stamp count")
        if np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("time stamps must increase strictly")

    def to_frame(self) -> pd.DataFrame:
        """Columns t, norm_p1, norm_inf, sup_VgradH, trunc_active."""
        return pd.DataFrame(
            {
                "t": self.times,
                "norm_p1": self.norm_p1,
                "norm_inf": self.norm_inf,
                "sup_VgradH": self.sup_vgrad,
                "trunc_active": self.trunc_active,
            }
        )

    def summary(self, fit_window: int = 0) -> TrajectorySummary:
        rate: float | None = None
        r2: float | None = None
        if self.times.size >= MIN_FIT_POINTS and np.all(self.norm_p1 > 0.0):
            rate, r2 = fit_decay_rate(self.times, self.norm_p1, fit_window)
        return TrajectorySummary(
            variable=self.variable,
            truncated=self.truncated,
            t_final=float(self.times[-1]),
            snapshots=int(self.times.size),
            final_norm_p1=float(self.norm_p1[-1]),
            max_norm_inf=float(np.max(self.norm_inf)),
            max_sup_vgrad=float(np.max(self.sup_vgrad)),
            truncation_ever_active=bool(np.any(self.trunc_active)),
            fitted_rate=rate,
            r2=r2,
        )


def record_from_snapshots(
    times: Array,
    snapshots: Array,
    op: OperatorAssembly,
    eps: float,
    truncated: bool,
) -> TrajectoryRecord:
    """Build a record of h-snapshots (columns) with their norms."""
    return TrajectoryRecord(
        times=np.asarray(times, dtype=float),
        snapshots=snapshots,
        norm_p1=np.atleast_1d(op.norm(snapshots)),
        norm_inf=np.max(np.abs(snapshots), axis=0),
        sup_vgrad=np.atleast_1d(op.grid.sup_weighted_gradient(snapshots, op.V)),
        trunc_active=np.array(
            [truncation_active(snapshots[:, j], op, eps) for j in range(snapshots.shape[1])]
        ),
        truncated=truncated,
    )


def fit_decay_rate(times: Array, values: Array, window: int = 0) -> tuple[float, float]:
    """Least-squares fit of log y against t over the trailing `window` points.

    Returns:
        (rate, r^2) with rate = -slope, positive for decay.

    Raises:
        ConfigurationError: With fewer than five points or a non-positive value.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if window:
        t, y = t[-window:], y[-window:]
    if t.size < MIN_FIT_POINTS:
        raise ConfigurationError(f"rate fit needs at least {MIN_FIT_POINTS} points")
    if np.any(y <= 0.0):
        raise ConfigurationError("rate fit needs positive values")
    log_y = np.log(y)
    if np.ptp(log_y) == 0.0:
        return 0.0, 1.0
    fit = linregress(t, log_y)
    return float(-fit.slope), float(fit.rvalue**2)


# =============================================================================
# Semiflow
# =============================================================================


@dataclass(frozen=True, eq=False)
class TruncatedSemiflow:
    """Exponential midpoint integrator of dh/dt + L h = M^eps(h) (or M(h)).

    Retained modes are advanced exactly in the eigenbasis; the spectral tail,
    if any, takes an implicit Euler step. Fields may carry batch columns.
    """

    decomp: SpectralDecomposition
    cfg: TruncationConfig
    dt: float = 1.0 / 256.0
    truncated: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.dt <= MAX_DT:
            raise ConfigurationError(f"dt={self.dt} outside (0, {MAX_DT}]")

    @property
    def op(self) -> OperatorAssembly:
        return self.decomp.assembly

    def with_truncation(self, truncated: bool) -> "TruncatedSemiflow":
        return replace(self, truncated=truncated)

    def nonlinearity(self, h: Array) -> Array:
        if self.truncated:
            return eval_M_trunc(h, self.op, self.cfg)
        return eval_M(h, self.op)

    @cached_property
    def _z(self) -> Array:
        return -self.decomp.eigenvalues * self.dt

    @cached_property
    def _tail_matrix(self) -> Array | None:
        """Banded B + dt (A - (p-1) B) on the active nodes."""
        if self.decomp.complete:
            return None
        op = self.op
        idx = np.flatnonzero(op.active)
        w = op.edge_weights[idx[:-1]]
        diagonal = op.mass[idx] * (1.0 - self.dt * op.shift)
        diagonal[:-1] += self.dt * w
        diagonal[1:] += self.dt * w
        ab = np.zeros((3, idx.size))
        ab[0, 1:] = -self.dt * w
        ab[1] = diagonal
        ab[2, :-1] = -self.dt * w
        return ab

    def _tail_step(self, r: Array, m_tail: Array) -> Array:
        """Implicit Euler step of the unresolved component, projected back onto the tail."""
        op = self.op
        act = op.active
        rhs = column(op.mass[act], r) * (r + self.dt * m_tail)[act]
        y = np.zeros_like(r)
        y[act] = solve_banded((1, 1), self._tail_matrix, rhs)
        return self.decomp.tail(op.close(y))

    def step(self, h: Array) -> Array:
        """One exponential midpoint step."""
        decomp = self.decomp
        z = self._z
        a = decomp.coefficients(h)
        r = h - decomp.synthesize(a)

        b0 = decomp.coefficients(self.nonlinearity(h))
        half = column(np.exp(0.5 * z), a) * a + column(0.5 * self.dt * phi1(0.5 * z), b0) * b0
        h_half = decomp.synthesize(half) + (r if self._tail_matrix is not None else 0.0)

        m_half = self.nonlinearity(h_half)
        b1 = decomp.coefficients(m_half)
        new = column(np.exp(z), a) * a + column(self.dt * phi1(z), b1) * b1
        out = decomp.synthesize(new)
        if self._tail_matrix is not None:
            out = out + self._tail_step(r, m_half - decomp.synthesize(b1))
        return out

    def steps_for(self, t: float) -> int:
        steps = round(t / self.dt)
        if t < 0.0 or abs(steps * self.dt - t) > 1e-9 * max(1.0, t):
            raise ConfigurationError(f"t={t} is not a non-negative multiple of dt={self.dt}")
        return steps

    def flow(self, h: Array, t: float) -> Array:
        """S_t(h) by round(t / dt) steps."""
        self.op.grid.check(h)
        h = np.asarray(h, dtype=float)
        for index in range(self.steps_for(t)):
            h = self.step(h)
            if not np.all(np.isfinite(h)):
                raise BlowUpError(
                    "non-finite values in the nonlinearity", time=(index + 1) * self.dt
                )
        return h

    def time_one_map(self, h: Array) -> Array:
        """S(h) = S_1(h)."""
        return self.flow(h, 1.0)

    def remainder_R(self, h: Array) -> Array:
        """R(h) = S(h) - e^{-L} h; the spectral tail of h is absorbed in R."""
        return self.time_one_map(h) - self.decomp.semigroup(1.0, h)

    def trajectory(self, h0: Array, T: float, record_every: int = 16) -> TrajectoryRecord:
        """Run to time T, recording every `record_every` steps and the final state.

        Raises:
            BlowUpError: When ||h||_inf exceeds 10.
            AdmissibilityError: When an untruncated run reaches 1 + h <= 0.
        """
        if record_every < 1:
            raise ConfigurationError("record_every must be positive")
        steps = self.steps_for(T)
        h = np.asarray(h0, dtype=float)
        if not self.truncated and np.any(1.0 + h <= 0.0):
            raise AdmissibilityError("initial datum violates 1 + h > 0")
        times = [0.0]
        snapshots = [h]
        for index in range(1, steps + 1):
            h = self.step(h)
            peak = float(np.max(np.abs(h)))
            if not np.isfinite(peak) or peak > BLOW_UP:
                raise BlowUpError(
                    f"||h||_inf = {peak:.3e} exceeds {BLOW_UP}", time=index * self.dt
                )
            if index % record_every == 0 or index == steps:
                times.append(index * self.dt)
                snapshots.append(h)
        record = record_from_snapshots(
            np.asarray(times), np.column_stack(snapshots), self.op, self.cfg.eps, self.truncated
        )
        logger.info(
            "trajectory_computed",
            truncated=self.truncated,
            t_final=T,
            snapshots=len(times),
            final_norm=float(record.norm_p1[-1]),
        )
        return record

    def picard_solve(
        self, h0: Array, T: float = 1.0, tol: float = 1e-12
    ) -> tuple[TrajectoryRecord, ConvergenceMonitor]:
        """Fixed point of g -> h(h0, g): solve dh/dt + L h = M^eps(g), h(0) = h0.

        The linear problem is solved by exponential trapezoid quadrature of the
        Duhamel formula in the eigenbasis. This is independent of `step`.

        Raises:
            ConfigurationError: If T > 1.
            ConvergenceError: After 100 sweeps, with the measured contraction factor.
        """
        if T > 1.0:
            raise ConfigurationError(f"Picard horizon T={T} exceeds 1; iterate time-one maps")
        decomp = self.decomp
        steps = self.steps_for(T)
        times = np.arange(steps + 1) * self.dt
        h0 = np.asarray(h0, dtype=float)
        a0 = decomp.coefficients(h0)
        r0 = h0 - decomp.synthesize(a0)
        z = self._z
        e, p1, p2 = np.exp(z), self.dt * phi1(z), self.dt * phi2(z)

        guess = decomp.synthesize(np.exp(np.outer(-decomp.eigenvalues, times)) * a0[:, None])
        guess = guess + r0[:, None]
        monitor = ConvergenceMonitor("picard", tol=tol, max_sweeps=MAX_PICARD)
        while True:
            m = self.nonlinearity(guess)
            b = decomp.coefficients(m)
            coefficients = np.empty((decomp.k_max, steps + 1))
            coefficients[:, 0] = a0
            for j in range(steps):
                coefficients[:, j + 1] = (
                    e * coefficients[:, j] + p1 * b[:, j] + p2 * (b[:, j + 1] - b[:, j])
                )
            update = decomp.synthesize(coefficients)
            if self._tail_matrix is not None:
                m_tail = m - decomp.synthesize(b)
                tail = np.empty_like(update)
                tail[:, 0] = r0
                for j in range(steps):
                    tail[:, j + 1] = self._tail_step(tail[:, j], m_tail[:, j + 1])
                update = update + tail
            change = decomp.norm(update - guess)
            relative = relative_change(change, decomp.norm(update))
            guess = update
            if monitor.update(float(np.max(change)), relative):
                break
        record = record_from_snapshots(times, guess, self.op, self.cfg.eps, self.truncated)
        return record, monitor


# =============================================================================
# Flows in the original variables
# =============================================================================


def solve_relative_error(
    semiflow: TruncatedSemiflow, h0: Array, T: float, record_every: int = 16
) -> TrajectoryRecord:
    """Trajectory of the relative error h = v / V - 1."""
    return semiflow.trajectory(h0, T, record_every)


def solve_rescaled_v(
    semiflow: TruncatedSemiflow, v0: Array, T: float, record_every: int = 16
) -> TrajectoryRecord:
    """Rescaled flow v = V (1 + h) through the untruncated relative-error flow.

    Raises:
        AdmissibilityError: If v0 is not positive at the interior nodes.
    """
    op = semiflow.op
    op.grid.check(v0)
    act = op.active
    if np.any(v0[act] <= 0.0):
        raise AdmissibilityError("v0 must be positive at interior nodes")
    h0 = np.zeros_like(v0, dtype=float)
    h0[act] = v0[act] / op.V[act] - 1.0
    record = semiflow.with_truncation(False).trajectory(op.close(h0), T, record_every)
    v = op.V[:, None] * (1.0 + record.snapshots)
    return replace(record, snapshots=v, variable="v")


@dataclass(frozen=True, eq=False)
class ExtinctionRun:
    """Solution of dw/dtau = Delta(w^m) until the sup norm falls below 1e-6."""

    state: StationaryState
    times: Array
    mass: Array
    sup_w: Array
    snapshots: Array
    extinction_time: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"tau": self.times, "mass": self.mass, "sup_w": self.sup_w})

    def rescaled(self) -> tuple[Array, Array]:
        """v(tau) = (w / ((1-m)(T - tau))^{1/(1-m)})^m for tau < T."""
        m = self.state.m
        keep = self.times < self.extinction_time
        tau = self.times[keep]
        scale = ((1.0 - m) * (self.extinction_time - tau)) ** (1.0 / (1.0 - m))
        return tau, (np.maximum(self.snapshots[:, keep], 0.0) / scale) ** m

    def report(self, predicted_time: float) -> ExtinctionReport:
        tau, v = self.rescaled()
        early = tau <= 0.5 * predicted_time
        V = self.state.V
        deviation = np.max(np.abs(v[:, early] - V[:, None])) / np.max(np.abs(V))
        return ExtinctionReport(
            predicted_time=predicted_time,
            extinction_time=self.extinction_time,
            relative_time_error=abs(self.extinction_time - predicted_time) / predicted_time,
            max_rescaled_deviation=float(deviation),
            mass_monotone=bool(np.all(np.diff(self.mass) <= 1e-14 * self.mass[0])),
        )


def separated_datum(state: StationaryState, T: float) -> Array:
    """w0 = ((1-m) T)^{1/(1-m)} V^{1/m}, extinguishing exactly at tau = T."""
    m = state.m
    return ((1.0 - m) * T) ** (1.0 / (1.0 - m)) * np.maximum(state.V, 0.0) ** (1.0 / m)


def solve_original_w(
    w0: Array, state: StationaryState, dt: float, t_max: float | None = None
) -> ExtinctionRun:
    """Implicit Euler with Newton solves in u = w^m, zero boundary values.

    Raises:
        AdmissibilityError: If w0 is negative or identically zero.
        ConvergenceError: If a Newton solve fails.
    """
    grid = state.grid
    grid.check(w0)
    if np.any(w0 < 0.0) or not np.any(w0 > 0.0):
        raise AdmissibilityError("w0 must be non-negative and not identically zero")
    p = state.p
    c = grid.mu_mid / grid.dx
    dirichlet = [grid.n - 1] + ([0] if grid.kind is DomainKind.INTERVAL else [])
    t_max = 10.0 if t_max is None else t_max

    w = np.asarray(w0, dtype=float).copy()
    w[dirichlet] = 0.0
    u = w ** (1.0 / p)
    times, mass, sup_w, snapshots = [0.0], [float(grid.measure @ w)], [float(w.max())], [w]
    tau = 0.0
    while sup_w[-1] >= EXTINCTION_LEVEL:
        if tau >= t_max:
            raise ConvergenceError(f"no extinction before tau={t_max}")
        u = _implicit_step(u, w, dt, c, grid.measure, p, dirichlet)
        w = u**p
        tau += dt
        times.append(tau)
        mass.append(float(grid.measure @ w))
        sup_w.append(float(w.max()))
        snapshots.append(w)
    logger.info("extinction_reached", extinction_time=tau, steps=len(times) - 1)
    return ExtinctionRun(
        state=state,
        times=np.asarray(times),
        mass=np.asarray(mass),
        sup_w=np.asarray(sup_w),
        snapshots=np.column_stack(snapshots),
        extinction_time=tau,
    )


def _implicit_step(
    u_old: Array,
    w_old: Array,
    dt: float,
    c: Array,
    measure: Array,
    p: float,
    dirichlet: list[int],
) -> Array:
    """Newton solve of q mu (u^p - w_old) + dt A0 u = 0."""
    u = u_old.copy()
    scale = max(1.0, float(np.max(measure * w_old)))
    for _ in range(50):
        flux = c * np.diff(u)
        rows = measure * (u**p - w_old)
        rows[:-1] -= dt * flux
        rows[1:] += dt * flux
        rows[dirichlet] = u[dirichlet]
        if np.max(np.abs(rows)) <= 1e-13 * scale:
            return u
        ab = np.zeros((3, u.size))
        ab[1] = p * measure * u ** (p - 1.0)
        ab[1, :-1] += dt * c
        ab[1, 1:] += dt * c
        ab[0, 1:] = -dt * c
        ab[2, :-1] = -dt * c
        for i in dirichlet:
            ab[1, i] = 1.0
            if i + 1 < u.size:
                ab[0, i + 1] = 0.0
            if i > 0:
                ab[2, i - 1] = 0.0
        u = np.maximum(u - solve_banded((1, 1), ab, rows), 0.0)
    raise ConvergenceError("Newton failed in the extinction solver", iterations=50)


# =============================================================================
# Monitors and measurements
# =============================================================================


def grad_bound_monitor(
    record: TrajectoryRecord, eps: float, t_min: float = 1.0
) -> GradientBoundReport:
    """sup over t >= t_min of ||V grad h||_inf, and the smallness level the run needed.

    eps_star_empirical is the largest max(||h||_inf, ||V grad h||_inf) over the
    record: the smallest cutoff scale under which no recorded snapshot reaches
    the transition region of eta. The cutoffs act on a snapshot exactly when
    this combined size exceeds eps, so truncation_inactive agrees with
    eps_star_empirical <= eps.
    """
    late = record.times >= t_min
    sup_late = float(np.max(record.sup_vgrad[late])) if np.any(late) else 0.0
    return GradientBoundReport(
        eps=eps,
        sup_vgrad_late=sup_late,
        holds=sup_late <= eps,
        eps_star_empirical=float(np.max(np.maximum(record.norm_inf, record.sup_vgrad))),
        truncation_inactive=not bool(np.any(record.trunc_active)),
    )


def picard_cross_check(semiflow: TruncatedSemiflow, h0: Array) -> tuple[float, float]:
    """max |S(h0) by Picard - S(h0) by stepping| and the Picard contraction factor."""
    record, monitor = semiflow.picard_solve(h0)
    stepped = semiflow.time_one_map(h0)
    return float(np.max(np.abs(record.snapshots[:, -1] - stepped))), monitor.contraction_factor


def smooth_samples(
    decomp: SpectralDecomposition,
    rng: np.random.Generator,
    size: int,
    amplitude: float,
    modes: int = 8,
) -> Array:
    """Random smooth columns with max(||u||_inf, ||V grad u||_inf) in [0.5, 1.5] * amplitude."""
    modes = min(modes, decomp.k_max)
    coefficients = rng.standard_normal((modes, size)) / np.arange(1, modes + 1)[:, None]
    u = decomp.eigenfields[:, :modes] @ coefficients
    op = decomp.assembly
    size_inf = np.maximum(
        np.max(np.abs(u), axis=0), op.grid.sup_weighted_gradient(u, op.V)
    )
    return u * (amplitude * rng.uniform(0.5, 1.5, size) / size_inf)


def stability_constant(
    semiflow: TruncatedSemiflow,
    rng: np.random.Generator,
    pairs: int = 20,
    radius: float = 0.1,
    T: float = 1.0,
) -> float:
    """Smallest C with sup|dh|^2 + sum dt A[dh, dh] <= e^{CT} |dh(0)|^2 over sampled pairs."""
    decomp = semiflow.decomp
    op = semiflow.op
    data = smooth_samples(decomp, rng, 2 * pairs, 1.0)
    data *= radius * rng.uniform(0.2, 1.0, 2 * pairs) / decomp.norm(data)
    h, g = data[:, :pairs], data[:, pairs:]
    initial = decomp.norm(h - g) ** 2
    sup_sq = initial.copy()
    dissipation = np.zeros(pairs)
    for _ in range(semiflow.steps_for(T)):
        h, g = semiflow.step(h), semiflow.step(g)
        diff = h - g
        sup_sq = np.maximum(sup_sq, decomp.norm(diff) ** 2)
        dissipation += semiflow.dt * (op.edge_weights @ np.diff(diff, axis=0) ** 2)
    constant = float(np.max(np.log((sup_sq + dissipation) / initial)) / T)
    logger.info("stability_constant_measured", pairs=pairs, constant=constant)
    return constant


def lipschitz_R(
    semiflow: TruncatedSemiflow, rng: np.random.Generator, pairs: int = 20
) -> LipschitzEstimate:
    """Sampled Lip(R^eps) on data at the cutoff scale, reported as a multiple of eps."""
    eps = semiflow.cfg.eps
    data = smooth_samples(semiflow.decomp, rng, 2 * pairs, 2.0 * eps)
    R = semiflow.remainder_R(data)
    decomp = semiflow.decomp
    ratios = decomp.norm(R[:, :pairs] - R[:, pairs:]) / decomp.norm(
        data[:, :pairs] - data[:, pairs:]
    )
    lipschitz = float(np.max(ratios))
    logger.info("lipschitz_measured", name="R", eps=eps, lipschitz=lipschitz)
    return LipschitzEstimate(
        name="R", samples=pairs, lipschitz=lipschitz, scale=eps, constant=lipschitz / eps
    )


def lipschitz_scaling(
    semiflow: TruncatedSemiflow,
    rng: np.random.Generator,
    eps_values: tuple[float, ...] = (0.01, 0.02, 0.04),
    pairs: int = 8,
) -> tuple[float, list[LipschitzEstimate]]:
    """Log-log slope of Lip(R^eps) against eps."""
    estimates = [
        lipschitz_R(replace(semiflow, cfg=replace(semiflow.cfg, eps=eps)), rng, pairs)
        for eps in eps_values
    ]
    slope = linregress(
        np.log(eps_values), np.log([estimate.lipschitz for estimate in estimates])
    ).slope
    return float(slope), estimates
