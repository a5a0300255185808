"""Pipeline objects for one run configuration, built lazily and shared."""

from functools import cached_property
from typing import Any

import numpy as np
import structlog

from fastdiff.config import Settings, build_settings, get_settings
from fastdiff.core.grid import Array, Grid, build_grid
from fastdiff.core.manifolds import InvariantManifolds
from fastdiff.core.nonlinearity import TruncationConfig
from fastdiff.core.operator import (
    GapParameters,
    OperatorAssembly,
    SpectralDecomposition,
    assemble,
    eigen,
    gap_parameters,
)
from fastdiff.core.semiflow import TruncatedSemiflow
from fastdiff.core.stationary import StationaryState, solve_stationary
from fastdiff.schemas import Datum

logger = structlog.get_logger()


class Laboratory:
    """
    Grid, stationary state, spectrum, semiflow and manifolds of one configuration.

    Every stage is computed on first access and cached, so subcommands only pay
    for what they use. Random streams are derived from the configured seed.
    """

    def __init__(self, settings: Settings | None = None):
        self.settings = settings or get_settings()

    def with_overrides(self, **values: Any) -> "Laboratory":
        """A fresh laboratory with some settings replaced."""
        return Laboratory(build_settings(**{**self.settings.model_dump(), **values}))

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Independent generator per named stream of the configured seed."""
        return np.random.default_rng([self.settings.seed, stream])

    @cached_property
    def grid(self) -> Grid:
        s = self.settings
        return build_grid(s.kind, s.dimension, s.n, s.grading)

    @cached_property
    def state(self) -> StationaryState:
        return solve_stationary(self.settings.p, self.grid, self.settings.stationary_tol)

    @cached_property
    def assembly(self) -> OperatorAssembly:
        return assemble(self.state)

    @cached_property
    def decomp(self) -> SpectralDecomposition:
        return eigen(self.assembly, self.settings.k_max)

    @cached_property
    def gap(self) -> GapParameters:
        return gap_parameters(self.decomp, self.settings.cut_index, self.settings.target_kcontr)

    @cached_property
    def truncation(self) -> TruncationConfig:
        return TruncationConfig(eps=self.settings.eps, eps0=self.settings.eps0)

    @cached_property
    def semiflow(self) -> TruncatedSemiflow:
        return TruncatedSemiflow(self.decomp, self.truncation, self.settings.dt, truncated=True)

    @cached_property
    def manifolds(self) -> InvariantManifolds:
        s = self.settings
        return InvariantManifolds(
            self.semiflow, self.gap, window_j=s.window_j, window_i=s.window_i, tol=s.tol
        )

    def initial_datum(self, datum: Datum | None = None, amplitude: float | None = None) -> Array:
        """Initial relative error of the `evolve` experiment, sup norm = amplitude.

        stable: the first stable eigenfield; unstable: the constant mode;
        mixed: their sum.
        """
        datum = Datum(datum or self.settings.datum)
        amplitude = self.settings.amplitude if amplitude is None else amplitude
        K = self.settings.cut_index
        fields = self.decomp.eigenfields
        stable = fields[:, K] / np.max(np.abs(fields[:, K]))
        unstable = np.ones(self.grid.n)
        if datum is Datum.STABLE:
            h0 = stable
        elif datum is Datum.UNSTABLE:
            h0 = unstable
        else:
            h0 = stable + unstable
        return amplitude * h0 / np.max(np.abs(h0))


_laboratory: Laboratory | None = None


def get_laboratory() -> Laboratory:
    """Get or create the laboratory for the default settings."""
    global _laboratory
    if _laboratory is None:
        _laboratory = Laboratory()
    return _laboratory
