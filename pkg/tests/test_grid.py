"""Tests for grids and weighted quadrature."""

import numpy as np
import pytest

from fastdiff.core.grid import build_grid, hardy_ratio
from fastdiff.core.stationary import solve_stationary
from fastdiff.exceptions import ConfigurationError, GridMismatchError, UndefinedRatioError
from fastdiff.schemas import DomainKind


class TestBuildGrid:
    """Tests for build_grid."""

    def test_interval_weights_integrate_one(self):
        """Trapezoidal weights sum to the interval length."""
        grid = build_grid("interval", 1, 11)
        assert grid.q.sum() == pytest.approx(1.0)
        assert grid.x[0] == 0.0 and grid.x[-1] == 1.0

    def test_interval_forces_dimension_one(self):
        """The interval ignores the requested dimension."""
        grid = build_grid(DomainKind.INTERVAL, 3, 11)
        assert grid.dimension == 1
        assert np.all(grid.mu == 1.0)

    def test_ball_measure(self):
        """Radial grids carry the factor x^(N-1)."""
        grid = build_grid("radial-ball", 3, 21)
        np.testing.assert_allclose(grid.mu, grid.x**2)
        assert grid.measure[0] == 0.0

    def test_minimum_nodes(self):
        """Five nodes are accepted, four are rejected."""
        assert build_grid("interval", 1, 5).n == 5
        with pytest.raises(ConfigurationError, match="n=4"):
            build_grid("interval", 1, 4)

    def test_grading_clusters_towards_boundary(self):
        """grading > 1 shrinks the cells towards x = 1."""
        grid = build_grid("radial-ball", 2, 41, grading=2.0)
        assert np.all(np.diff(grid.dx) < 0.0)

    def test_rejects_unknown_kind(self):
        """Unknown domain kinds are configuration errors."""
        with pytest.raises(ConfigurationError, match="unknown domain kind"):
            build_grid("torus", 1, 11)

    def test_to_frame_columns(self):
        """Grid table columns."""
        frame = build_grid("interval", 1, 7).to_frame()
        assert list(frame.columns) == ["index", "x", "q", "mu"]
        assert len(frame) == 7


class TestWeightedQuadrature:
    """Tests for weighted pairings and norms."""

    @pytest.fixture
    def grid(self):
        return build_grid("interval", 1, 51)

    def test_inner_is_symmetric(self, grid):
        """<u, v> = <v, u>."""
        V = np.sin(np.pi * grid.x)
        u, v = np.cos(grid.x), grid.x**2
        assert grid.weighted_inner(u, v, V, 3.0) == grid.weighted_inner(v, u, V, 3.0)

    def test_norm_of_constant(self, grid):
        """||1||^2 with sigma = 0 is the measure of the domain."""
        V = np.sin(np.pi * grid.x)
        assert grid.norm(np.ones(grid.n), V, 0.0) == pytest.approx(1.0)

    def test_mismatch_raises(self, grid):
        """Fields must carry one value per node."""
        with pytest.raises(GridMismatchError):
            grid.weighted_inner(np.ones(grid.n), np.ones(grid.n - 1), np.ones(grid.n), 1.0)

    def test_column_batches(self, grid):
        """Trailing axes are independent columns."""
        V = np.sin(np.pi * grid.x)
        fields = np.column_stack([np.ones(grid.n), 2.0 * np.ones(grid.n)])
        norms = grid.norm(fields, V, 0.0)
        np.testing.assert_allclose(norms, [1.0, 2.0])

    def test_sup_weighted_gradient(self, grid):
        """V grad h of a linear field is V times its slope."""
        V = np.sin(np.pi * grid.x)
        assert grid.sup_weighted_gradient(3.0 * grid.x, V) == pytest.approx(3.0)

    def test_hardy_ratio_of_zero(self, grid):
        """The Hardy ratio of the zero field is undefined."""
        V = np.sin(np.pi * grid.x)
        with pytest.raises(UndefinedRatioError):
            hardy_ratio(grid, np.zeros(grid.n), V, 2.0)

    def test_hardy_ratio_positive(self, grid):
        """The Hardy ratio of a smooth field is finite and positive."""
        V = np.sin(np.pi * grid.x)
        assert 0.0 < hardy_ratio(grid, np.cos(grid.x), V, 2.0) < np.inf


class TestGradient:
    """Tests for the finite-difference gradient."""

    @pytest.fixture
    def grid(self):
        return build_grid("interval", 1, 401)

    def test_affine_exact(self, grid):
        """grad x = 1 at every node."""
        np.testing.assert_allclose(grid.gradient(grid.x), 1.0, atol=1e-12)

    def test_quadratic_exact(self, grid):
        """grad x^2 = 2x, boundary nodes included."""
        np.testing.assert_allclose(grid.gradient(grid.x**2), 2.0 * grid.x, atol=1e-10)

    def test_sine(self, grid):
        """grad sin(pi x) is within 1e-4 of pi cos(pi x) at n = 401."""
        error = grid.gradient(np.sin(np.pi * grid.x)) - np.pi * np.cos(np.pi * grid.x)
        assert np.max(np.abs(error)) <= 1e-4


class TestRadialQuadrature:
    """Tests for the radial measure."""

    def test_ball_volume_factor(self):
        """<1, 1> with sigma = 0 on the 3-ball grid is int_0^1 x^2 dx = 1/3."""
        grid = build_grid("radial-ball", 3, 101)
        ones = np.ones(grid.n)
        assert grid.weighted_inner(ones, ones, ones, 0.0) == pytest.approx(1.0 / 3.0, abs=1e-4)


class TestHardyRefinement:
    """The Hardy ratio is stable under grid refinement."""

    @pytest.fixture(scope="class")
    def states(self):
        return [solve_stationary(2.0, build_grid("interval", 1, n)) for n in (201, 401)]

    def ratios(self, states, field):
        return [hardy_ratio(state.grid, field(state.grid.x), state.V, 2.0) for state in states]

    def test_constant(self, states):
        """h = 1."""
        coarse, fine = self.ratios(states, np.ones_like)
        assert coarse == pytest.approx(fine, rel=0.05)

    def test_boundary_spike(self, states):
        """h = (1 - x)^0.6 with its singular gradient at x = 1."""
        coarse, fine = self.ratios(states, lambda x: (1.0 - x) ** 0.6)
        assert coarse == pytest.approx(fine, rel=0.1)

    def test_random_cosine_series(self, states):
        """Random low-frequency cosine series."""
        rng = np.random.default_rng(5)
        for _ in range(3):
            a = rng.standard_normal(5)

            def field(x, a=a):
                return np.cos(np.pi * np.outer(x, np.arange(5))) @ a

            coarse, fine = self.ratios(states, field)
            assert coarse == pytest.approx(fine, rel=0.1)
