"""Numerical services of the laboratory."""

from fastdiff.core.grid import Grid, build_grid
from fastdiff.core.lab import Laboratory, get_laboratory
from fastdiff.core.manifolds import InvariantManifolds
from fastdiff.core.nonlinearity import TruncationConfig, eval_M, eval_M_trunc, eval_N
from fastdiff.core.operator import (
    GapParameters,
    OperatorAssembly,
    SpectralDecomposition,
    assemble,
    eigen,
    gap_parameters,
)
from fastdiff.core.semiflow import TrajectoryRecord, TruncatedSemiflow
from fastdiff.core.stationary import StationaryState, solve_stationary

__all__ = [
    "Grid",
    "build_grid",
    "Laboratory",
    "get_laboratory",
    "InvariantManifolds",
    "TruncationConfig",
    "eval_M",
    "eval_M_trunc",
    "eval_N",
    "GapParameters",
    "OperatorAssembly",
    "SpectralDecomposition",
    "assemble",
    "eigen",
    "gap_parameters",
    "TrajectoryRecord",
    "TruncatedSemiflow",
    "StationaryState",
    "solve_stationary",
]
