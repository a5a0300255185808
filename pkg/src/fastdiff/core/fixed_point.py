"""Convergence bookkeeping shared by the fixed-point iterations."""

from dataclasses import dataclass, field

import numpy as np
import structlog

from fastdiff.exceptions import ConvergenceError
from fastdiff.schemas import FixedPointReport

logger = structlog.get_logger()

FLOOR = 16.0 * float(np.finfo(float).eps)
STALL_LEVEL = 1e-9


def relative_change(change: np.ndarray, size: np.ndarray) -> float:
    """max_k |change_k| / |size_k|, with 0/0 read as 0."""
    change = np.asarray(change, dtype=float)
    size = np.asarray(size, dtype=float)
    if np.any((change > 0.0) & (size == 0.0)):
        return float("inf")
    ratio = np.divide(change, size, out=np.zeros_like(change), where=size > 0.0)
    return float(np.max(ratio, initial=0.0))


@dataclass
class ConvergenceMonitor:
    """Track sweep increments of a contraction until tol or the rounding floor.

    A sweep is accepted as converged when its increment is at most `tol`, when
    the relative change of every entry reaches the rounding floor, or when the
    increment stops decreasing twice in a row at relative changes below
    STALL_LEVEL. Entries are compared with their own size so that large
    entries of a growing orbit do not mask the convergence of small ones.
    """

    name: str
    tol: float
    max_sweeps: int
    increments: list[float] = field(default_factory=list)
    relative: list[float] = field(default_factory=list)
    reason: str = ""

    @property
    def sweeps(self) -> int:
        return len(self.increments)

    @property
    def final_increment(self) -> float:
        return self.increments[-1] if self.increments else 0.0

    @property
    def contraction_factor(self) -> float:
        """Largest ratio of successive increments while above ten times the rounding floor."""
        ratios = [
            later / earlier
            for earlier, later, rel in zip(
                self.increments, self.increments[1:], self.relative[1:], strict=False
            )
            if earlier > 0.0 and rel > 10.0 * FLOOR
        ]
        return max(ratios, default=0.0)

    def update(self, increment: float, relative: float) -> bool:
        """Record one sweep; True when the iteration should stop.

        Args:
            increment: Norm of the difference of successive iterates.
            relative: Largest entry-wise change relative to the entry size.

        Raises:
            ConvergenceError: On a non-finite increment or after max_sweeps sweeps.
        """
        if not np.isfinite(increment):
            raise ConvergenceError(
                f"{self.name}: non-finite increment",
                iterations=self.sweeps,
                contraction_factor=self.contraction_factor,
            )
        self.increments.append(float(increment))
        self.relative.append(float(relative))
        logger.debug("fixed_point_sweep", name=self.name, sweep=self.sweeps, increment=increment)

        if increment <= self.tol:
            self.reason = "tol"
        elif relative <= FLOOR:
            self.reason = "floor"
        elif (
            relative <= STALL_LEVEL
            and self.sweeps >= 3
            and self.increments[-1] >= self.increments[-2] >= self.increments[-3]
        ):
            self.reason = "stall"
        elif self.sweeps >= self.max_sweeps:
            raise ConvergenceError(
                f"{self.name}: no convergence after {self.sweeps} sweeps "
                f"(increment {increment:.3e})",
                iterations=self.sweeps,
                contraction_factor=self.contraction_factor,
            )
        if self.reason:
            logger.info(
                f"{self.name}_converged",
                sweeps=self.sweeps,
                increment=increment,
                reason=self.reason,
                contraction_factor=self.contraction_factor,
            )
            return True
        return False

    def report(self, norm: float, bound: float) -> FixedPointReport:
        return FixedPointReport(
            name=self.name,
            sweeps=self.sweeps,
            contraction_factor=self.contraction_factor,
            final_increment=self.final_increment,
            norm=norm,
            bound=bound,
        )
