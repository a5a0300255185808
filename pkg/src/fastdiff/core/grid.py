"""Discretized domains, weighted quadrature and weighted norms."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
import structlog
from numpy.typing import NDArray

from fastdiff.exceptions import (
    AdmissibilityError,
    ConfigurationError,
    GridMismatchError,
    UndefinedRatioError,
)
from fastdiff.schemas import DomainKind

logger = structlog.get_logger()

Array = NDArray[np.float64]

MIN_NODES = 5


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes, trapezoidal weights and radial measure of a 1D or radial domain.

    Fields on a grid are numpy arrays whose first axis runs over the nodes;
    trailing axes are independent columns.
    """

    kind: DomainKind
    dimension: int
    x: Array
    q: Array
    mu: Array

    @property
    def n(self) -> int:
        """Number of nodes."""
        return int(self.x.shape[0])

    @cached_property
    def dx(self) -> Array:
        """Edge lengths x_{i+1} - x_i."""
        return np.diff(self.x)

    @cached_property
    def x_mid(self) -> Array:
        """Edge midpoints."""
        return 0.5 * (self.x[1:] + self.x[:-1])

    @cached_property
    def mu_mid(self) -> Array:
        """Measure factor at edge midpoints."""
        return self.x_mid ** (self.dimension - 1)

    @cached_property
    def boundary_distance(self) -> Array:
        """dist(x_i, boundary): min(x, 1 - x) on the interval, 1 - x on the ball."""
        if self.kind is DomainKind.INTERVAL:
            return np.minimum(self.x, 1.0 - self.x)
        return 1.0 - self.x

    @cached_property
    def measure(self) -> Array:
        """Combined weights q_i * mu_i."""
        return self.q * self.mu

    def check(self, *fields: Array) -> None:
        """Raise GridMismatchError unless every field has one value per node."""
        for field in fields:
            if np.shape(field)[0] != self.n:
                raise GridMismatchError(
                    f"field with {np.shape(field)[0]} values on a grid of {self.n} nodes"
                )

    def weights(self, V: Array, sigma: float) -> Array:
        """Quadrature weights q mu V^sigma of the weighted pairing."""
        self.check(V)
        if np.any(V[1:-1] < 0.0):
            raise AdmissibilityError("weight V is negative at an interior node")
        return self.measure * np.abs(V) ** sigma

    def weighted_inner(self, u: Array, v: Array, V: Array, sigma: float) -> Array | float:
        """Sum_i q_i mu_i u_i v_i V_i^sigma (column-wise for 2D fields)."""
        self.check(u, v)
        result = self.weights(V, sigma) @ (u * v)
        return float(result) if np.ndim(result) == 0 else result

    def norm(self, h: Array, V: Array, sigma: float) -> Array | float:
        """Weighted L^2 norm associated with weighted_inner."""
        return np.sqrt(self.weighted_inner(h, h, V, sigma))

    def gradient(self, h: Array) -> Array:
        """Second-order finite-difference gradient along the node axis."""
        self.check(h)
        return np.gradient(h, self.x, axis=0, edge_order=2)

    def sup_weighted_gradient(self, h: Array, V: Array) -> Array | float:
        """||V grad h||_inf, column-wise for 2D fields."""
        scale = V if np.ndim(h) == 1 else V[:, None]
        result = np.max(np.abs(scale * self.gradient(h)), axis=0)
        return float(result) if np.ndim(result) == 0 else result

    def to_frame(self) -> pd.DataFrame:
        """Grid table with columns index, x, q, mu."""
        return pd.DataFrame(
            {"index": np.arange(self.n), "x": self.x, "q": self.q, "mu": self.mu}
        )


def build_grid(
    kind: DomainKind | str, dimension: int, n: int, grading: float = 1.0
) -> Grid:
    """Build an interval or radial-ball grid on [0, 1].

    Args:
        kind: ``interval`` or ``radial-ball``.
        dimension: Space dimension N (forced to 1 for the interval).
        n: Number of nodes.
        grading: 1 for uniform nodes; > 1 clusters nodes towards x = 1.

    Returns:
        A grid with composite trapezoidal weights.
    """
    try:
        kind = DomainKind(kind)
    except ValueError as exc:
        raise ConfigurationError(f"unknown domain kind: {kind!r}") from exc
    if n < MIN_NODES:
        raise ConfigurationError(f"n={n} is too small (need n >= {MIN_NODES})")
    if grading < 1.0:
        raise ConfigurationError(f"grading={grading} must be >= 1")
    if kind is DomainKind.INTERVAL:
        dimension = 1
    elif dimension < 1:
        raise ConfigurationError(f"dimension={dimension} must be positive")

    x = 1.0 - (1.0 - np.arange(n) / (n - 1)) ** grading
    x[0], x[-1] = 0.0, 1.0
    dx = np.diff(x)
    q = np.zeros(n)
    q[:-1] += 0.5 * dx
    q[1:] += 0.5 * dx
    mu = np.ones(n) if kind is DomainKind.INTERVAL else x ** (dimension - 1)

    logger.debug("grid_built", kind=kind.value, dimension=dimension, n=n, grading=grading)
    return Grid(kind=kind, dimension=dimension, x=x, q=q, mu=mu)


def hardy_ratio(grid: Grid, h: Array, V: Array, p: float) -> float:
    """||h||_{L^2} / (||h||_{L^2_{p+1}} + ||grad h||_{L^2_2}).

    Raises:
        UndefinedRatioError: If h vanishes identically.
    """
    grid.check(h, V)
    if not np.any(h):
        raise UndefinedRatioError("hardy ratio of the zero field is undefined")
    plain = float(grid.norm(h, V, 0.0))
    weighted = float(grid.norm(h, V, p + 1.0))
    gradient_part = float(grid.norm(grid.gradient(h), V, 2.0))
    return plain / (weighted + gradient_part)
