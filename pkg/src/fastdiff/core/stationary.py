"""Lane-Emden states -Delta V = V^p with zero boundary values."""

from dataclasses import dataclass

import numpy as np
import pandas as pd
import structlog
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from fastdiff.core.grid import Array, Grid
from fastdiff.exceptions import BracketingError, ConfigurationError, ConvergenceError
from fastdiff.schemas import DomainKind, StationarySummary

logger = structlog.get_logger()

S_MIN = 1e-3
S_MAX = 1e3
MAX_NEWTON = 50
MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class StationaryState:
    """A positive stationary profile on a grid."""

    grid: Grid
    p: float
    V: Array
    s: float
    residual: float
    iterations: int
    newton_slope: float

    @property
    def m(self) -> float:
        """Fast diffusion exponent."""
        return 1.0 / self.p

    @property
    def v_max(self) -> float:
        """Maximum of the profile."""
        return float(np.max(self.V))

    def to_frame(self) -> pd.DataFrame:
        """Profile table with columns x, V."""
        return pd.DataFrame({"x": self.grid.x, "V": self.V})


def check_exponent(p: float, dimension: int) -> None:
    """Reject exponents outside (1, (N+2)/(N-2))."""
    if p <= 1.0:
        raise ConfigurationError(f"p={p} must exceed 1")
    if dimension >= 3 and p >= (dimension + 2) / (dimension - 2):
        raise ConfigurationError(f"p={p} is not subcritical in dimension {dimension}")


def _source(V: float, p: float) -> float:
    """Odd extension |V|^{p-1} V so shots may continue through zero."""
    return float(np.sign(V) * abs(V) ** p)


def shoot_profile(p: float, s: float, grid: Grid) -> tuple[Array, Array]:
    """Integrate -(mu V')' = mu V^p across the grid nodes with classical RK4.

    Interval: V(0) = 0, V'(0) = s. Ball: V(0) = s, V'(0) = 0.

    Returns:
        Nodal values of V and V'.
    """
    if s <= 0.0:
        raise ConfigurationError(f"shooting parameter s={s} must be positive")
    radial = grid.kind is DomainKind.RADIAL_BALL
    friction = grid.dimension - 1 if radial else 0

    def rhs(x: float, y: tuple[float, float]) -> tuple[float, float]:
        value, slope = y
        if friction and x == 0.0:
            return slope, -_source(value, p) / grid.dimension
        return slope, -_source(value, p) - (friction / x if friction else 0.0) * slope

    V = np.empty(grid.n)
    dV = np.empty(grid.n)
    y = (s, 0.0) if radial else (0.0, s)
    V[0], dV[0] = y
    for i, h in enumerate(grid.dx):
        x = float(grid.x[i])
        k1 = rhs(x, y)
        k2 = rhs(x + h / 2, (y[0] + h / 2 * k1[0], y[1] + h / 2 * k1[1]))
        k3 = rhs(x + h / 2, (y[0] + h / 2 * k2[0], y[1] + h / 2 * k2[1]))
        k4 = rhs(x + h, (y[0] + h * k3[0], y[1] + h * k3[1]))
        y = (
            y[0] + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            y[1] + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        )
        V[i + 1], dV[i + 1] = y
    return V, dV


def shoot(p: float, s: float, grid: Grid) -> float:
    """Signed value at x = 1 of the shot with parameter s."""
    V, _ = shoot_profile(p, s, grid)
    return float(V[-1])


def bracket_root(p: float, grid: Grid) -> tuple[float, float]:
    """First sign change of the shooting residual, doubling s from S_MIN."""
    s = S_MIN
    value = shoot(p, s, grid)
    while s < S_MAX:
        upper = 2.0 * s
        upper_value = shoot(p, upper, grid)
        if value * upper_value <= 0.0:
            return s, upper
        s, value = upper, upper_value
    raise BracketingError(f"no sign change of the shooting residual for s in [{S_MIN}, {S_MAX}]")


def _flux_coefficients(grid: Grid) -> Array:
    return grid.mu_mid / grid.dx


def stationary_residual(V: Array, p: float, grid: Grid) -> Array:
    """Finite-volume rows -(F_{i+1/2} - F_{i-1/2}) - q mu V^p with Dirichlet rows."""
    flux = _flux_coefficients(grid) * np.diff(V)
    rows = -grid.measure * np.abs(V) ** p
    rows[:-1] -= flux
    rows[1:] += flux
    rows[-1] = V[-1]
    if grid.kind is DomainKind.INTERVAL:
        rows[0] = V[0]
    return rows


def _newton_matrix(V: Array, p: float, grid: Grid) -> Array:
    """Banded (1, 1) storage of the residual Jacobian."""
    c = _flux_coefficients(grid)
    n = grid.n
    ab = np.zeros((3, n))
    diagonal = -p * grid.measure * np.abs(V) ** (p - 1)
    diagonal[:-1] += c
    diagonal[1:] += c
    ab[1] = diagonal
    ab[0, 1:] = -c
    ab[2, :-1] = -c
    ab[1, -1] = 1.0
    ab[2, -2] = 0.0
    if grid.kind is DomainKind.INTERVAL:
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
    return ab


def solve_stationary(p: float, grid: Grid, tol: float = 1e-9) -> StationaryState:
    """Solve the Lane-Emden problem by shooting, then Newton on the discrete system.

    Args:
        p: Exponent, subcritical for the grid dimension.
        grid: Interval or radial-ball grid.
        tol: Bound on the max-norm of the discrete residual.

    Returns:
        The positive stationary state.

    Raises:
        BracketingError: If no shooting bracket exists in [1e-3, 1e3].
        ConvergenceError: If Newton stagnates.
    """
    check_exponent(p, grid.dimension)
    lower, upper = bracket_root(p, grid)
    s_star = float(brentq(lambda s: shoot(p, s, grid), lower, upper, xtol=1e-14, rtol=1e-14))
    V, _ = shoot_profile(p, s_star, grid)
    V[-1] = 0.0
    if grid.kind is DomainKind.INTERVAL:
        V[0] = 0.0
    interior = slice(1, -1) if grid.kind is DomainKind.INTERVAL else slice(0, -1)
    V[interior] = np.maximum(V[interior], 1e-12)

    residual = float(np.max(np.abs(stationary_residual(V, p, grid))))
    iterations = 0
    while residual > tol:
        if iterations >= MAX_NEWTON:
            raise ConvergenceError(
                f"Newton stagnated at residual {residual:.3e}", iterations=iterations
            )
        rows = stationary_residual(V, p, grid)
        step = solve_banded((1, 1), _newton_matrix(V, p, grid), -rows)
        damping = 1.0
        for _ in range(MAX_HALVINGS):
            if np.all(V[interior] + damping * step[interior] > 0.0):
                break
            damping *= 0.5
        V = V + damping * step
        iterations += 1
        residual = float(np.max(np.abs(stationary_residual(V, p, grid))))
        logger.debug("newton_step", iteration=iterations, residual=residual, damping=damping)

    slope_index = 0 if grid.kind is DomainKind.INTERVAL else None
    newton_slope = (
        float(grid.gradient(V)[slope_index]) if slope_index is not None else float(V[0])
    )
    logger.info(
        "stationary_solved",
        kind=grid.kind.value,
        p=p,
        s_star=s_star,
        v_max=float(np.max(V)),
        residual=residual,
        iterations=iterations,
    )
    return StationaryState(
        grid=grid,
        p=p,
        V=V,
        s=s_star,
        residual=residual,
        iterations=iterations,
        newton_slope=newton_slope,
    )


def boundary_comparability(state: StationaryState) -> tuple[float, float]:
    """Min and max over interior nodes of V / dist(x, boundary)."""
    grid = state.grid
    interior = grid.boundary_distance > 0.0
    ratio = state.V[interior] / grid.boundary_distance[interior]
    return float(np.min(ratio)), float(np.max(ratio))


def half_length_identity(state: StationaryState, s: float | None = None) -> float:
    """Energy quadrature (Vmax/s) * int_0^1 dt / sqrt(1 - t^{p+1}), equal to 1/2 on the interval.

    Uses the conserved energy V'^2/2 + V^{p+1}/(p+1) = s^2/2 of the 1D problem,
    independently of the discrete solver.
    """
    if state.grid.kind is not DomainKind.INTERVAL:
        raise ConfigurationError("the half-length identity applies to the interval only")
    p = state.p
    s = state.newton_slope if s is None else s
    v_max = ((p + 1.0) * s**2 / 2.0) ** (1.0 / (p + 1.0))

    def regular_part(t: float) -> float:
        # (1 - t^{p+1}) / (1 - t) extended continuously to t = 1
        ratio = (1.0 - t ** (p + 1.0)) / (1.0 - t) if t < 1.0 else p + 1.0
        return 1.0 / np.sqrt(ratio)

    integral, _ = quad(regular_part, 0.0, 1.0, weight="alg", wvar=(0.0, -0.5))
    return float(v_max / s * integral)


def summarize(state: StationaryState) -> StationarySummary:
    """JSON summary of a solved state."""
    c_low, c_high = boundary_comparability(state)
    grid = state.grid
    return StationarySummary(
        kind=grid.kind,
        dimension=grid.dimension,
        n=grid.n,
        p=state.p,
        shooting_parameter=state.s,
        newton_slope=state.newton_slope,
        v_max=state.v_max,
        residual=state.residual,
        newton_iterations=state.iterations,
        c_low=c_low,
        c_high=c_high,
        half_length=(
            half_length_identity(state) if grid.kind is DomainKind.INTERVAL else None
        ),
    )
