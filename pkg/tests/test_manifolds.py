"""Tests for the center manifold, the stable foliation and shadowing."""

import numpy as np
import pytest

from fastdiff.core.manifolds import DUMP_NODES, InvariantManifolds, LipschitzLadder
from fastdiff.core.semiflow import TrajectoryRecord
from fastdiff.exceptions import ConfigurationError, SmallnessError
from fastdiff.schemas import LipschitzEstimate


@pytest.fixture(scope="module")
def coordinates(manifolds, lab):
    """Two sampled center points of size eps."""
    return manifolds.sample_center(lab.rng(30), 2, lab.settings.eps)


@pytest.fixture(scope="module")
def base_point(manifolds):
    """A small point off the center manifold."""
    return manifolds.shadow_datum()


class TestConstruction:
    """Tests for InvariantManifolds preconditions."""

    def test_window_minimum(self, semiflow, gap):
        """Sequence windows have at least five slices."""
        with pytest.raises(ConfigurationError):
            InvariantManifolds(semiflow, gap, window_j=4)

    def test_requires_truncated_flow(self, semiflow, gap):
        """The manifolds are built from the truncated time-one map."""
        with pytest.raises(ConfigurationError):
            InvariantManifolds(semiflow.with_truncation(False), gap)


class TestCenterManifold:
    """Tests for the J iteration and theta."""

    @pytest.fixture(scope="class")
    def sequence(self, manifolds, coordinates):
        return manifolds.iterate_J(coordinates)

    def test_theta_of_zero(self, manifolds):
        """theta(0) = 0."""
        assert np.all(manifolds.theta(np.zeros(manifolds.K)) == 0.0)

    def test_contraction(self, sequence, gap):
        """The sweeps contract at most like K_contr."""
        assert 0.0 < sequence.monitor.contraction_factor <= gap.k_contr + 0.05

    def test_orbit_property(self, manifolds, sequence):
        """Consecutive slices are linked by S."""
        assert np.max(manifolds.orbit_defect(sequence)) <= 10.0 * manifolds.tol

    def test_sequence_norm_bound(self, manifolds, sequence, coordinates):
        """The fixed point is no larger than |||h_c|||."""
        bound = manifolds.trinorm(manifolds.center_field(coordinates))
        assert np.all(manifolds.sequence_norm(sequence) <= bound + 10.0 * manifolds.tol)

    def test_zero_slice(self, manifolds, sequence, coordinates):
        """The center part of h_0 is h_c."""
        h0 = sequence.at(0)
        center = manifolds.decomp.project(manifolds.K, h0)[0]
        np.testing.assert_allclose(center, manifolds.center_field(coordinates), atol=1e-12)

    def test_theta_in_stable_space(self, manifolds, coordinates):
        """theta maps into E_s."""
        theta = manifolds.theta(coordinates[:, 0])
        assert theta.shape == (manifolds.n,)
        center = manifolds.decomp.project(manifolds.K, theta)[0]
        assert manifolds.decomp.norm(center) <= 1e-12

    def test_invariance(self, manifolds, coordinates):
        """S maps W_c into itself, at t = 1 and t = 1/2."""
        report = manifolds.invariance_report(coordinates)
        assert report.deviation_t1 <= 10.0 * manifolds.tol
        assert report.deviation_half <= 10.0 * manifolds.tol
        assert report.points == 2

    def test_invariance_at_zero(self, manifolds):
        """The zero point does not move."""
        assert manifolds.invariance_check(np.zeros(manifolds.K)) <= 1e-15

    def test_dump_frame(self, manifolds, coordinates):
        """Coordinates first, then theta at the dump nodes."""
        frame = manifolds.dump_frame(coordinates)
        assert list(frame.columns[: manifolds.K]) == ["c_1"]
        assert frame.shape == (2, manifolds.K + DUMP_NODES)
        assert frame.columns[-1] == "theta_x1.0000"

    def test_window_robustness(self, manifolds, lab):
        """theta barely moves when the J window grows by five slices."""
        coordinates = manifolds.sample_center(lab.rng(35), 2, 0.2 * lab.settings.eps)
        wider = InvariantManifolds(
            manifolds.semiflow,
            manifolds.gap,
            window_j=manifolds.window_j + 5,
            window_i=manifolds.window_i,
            tol=manifolds.tol,
        )
        tol = 0.1 * manifolds.tol
        difference = manifolds.trinorm(
            manifolds.theta(coordinates, tol) - wider.theta(coordinates, tol)
        )
        assert np.all(difference <= 10.0 * manifolds.tol)


class TestTriNorm:
    """Tests for the tri-norm max(||P_c h||, ||P_s h||)."""

    def test_equivalent_to_weighted_norm(self, manifolds, lab):
        """|||h||| <= ||h||_{p+1} <= sqrt(2) |||h||| on random fields."""
        fields = lab.rng(37).standard_normal((manifolds.n, 100))
        tri = manifolds.trinorm(fields)
        norm = manifolds.decomp.norm(fields)
        assert np.all(tri <= norm * (1.0 + 1e-10))
        assert np.all(norm <= np.sqrt(2.0) * tri * (1.0 + 1e-10))


class TestStableFoliation:
    """Tests for the I iteration, psi and the leaf intersection."""

    def test_zero_forcing(self, manifolds, base_point):
        """g_s = 0 reproduces the base orbit."""
        sequence = manifolds.iterate_I(base_point, np.zeros(manifolds.n))
        assert np.max(np.abs(sequence.fields)) <= 1e-12

    def test_psi_of_zero(self, manifolds, base_point):
        """psi_g(0) = 0: g lies on its own leaf."""
        psi = manifolds.psi(base_point, np.zeros(manifolds.n))
        assert np.max(np.abs(psi)) <= 1e-12

    def test_psi_in_center_space(self, manifolds, base_point, lab):
        """psi_g maps into E_c."""
        g_s = manifolds.sample_stable(lab.rng(31), 1, 0.5 * lab.settings.eps)[:, 0]
        psi = manifolds.psi(base_point, g_s)
        stable = manifolds.decomp.project(manifolds.K, psi)[1]
        assert manifolds.decomp.norm(stable) <= 1e-12

    def test_characterization(self, manifolds, base_point, lab):
        """Leaf members approach the orbit of g at rate lambda_-."""
        g_s = manifolds.sample_stable(lab.rng(32), 1, 0.5 * lab.settings.eps)[:, 0]
        result = manifolds.characterization(base_point, g_s)
        assert result.separation <= result.bound + 10.0 * manifolds.tol
        assert result.profile.shape == (manifolds.window_i + 1,)

    def test_intersection_of_manifold_point(self, manifolds, coordinates):
        """A point of W_c is its own intersection."""
        point = manifolds.manifold_point(coordinates[:, 0])
        found = manifolds.foliation_intersect(point.field)
        np.testing.assert_allclose(found.coordinates, coordinates[:, 0], atol=1e-6)
        assert found.membership_defect <= 10.0 * manifolds.tol

    def test_psi_continuous_in_base_point(self, manifolds, base_point, lab):
        """psi_g(g_s) moves by no more than the shift of g."""
        g_s = manifolds.sample_stable(lab.rng(36), 1, 0.5 * lab.settings.eps)[:, 0]
        shift = manifolds.sample_stable(lab.rng(38), 1, 1.0)[:, 0]
        psi = manifolds.psi(base_point, g_s)
        for delta in (1e-3 * lab.settings.eps, 1e-4 * lab.settings.eps):
            moved = manifolds.psi(base_point + delta * shift, g_s)
            bound = manifolds.trinorm(delta * shift) + 10.0 * manifolds.tol
            assert manifolds.trinorm(moved - psi) <= bound

    def test_lipschitz_ladder(self, manifolds, base_point, lab):
        """Measured constants stay below their references."""
        ladder = manifolds.lipschitz_ladder(base_point, lab.rng(33), pairs=2)
        assert ladder.composition_holds
        assert ladder.theta.lipschitz <= ladder.theta.reference
        assert ladder.psi.lipschitz <= ladder.psi.reference
        assert ladder.sequence.lipschitz <= ladder.sequence.reference

    def test_chi_measured_end_to_end(self, manifolds, base_point, lab):
        """Lip(chi) is the ratio of chi-image and q_s distances on one pair."""
        ladder = manifolds.lipschitz_ladder(base_point, lab.rng(34), pairs=1)
        rng = lab.rng(34)
        manifolds.sample_center(rng, 2, 0.02)
        g_stable = manifolds.decomp.project(manifolds.K, base_point)[1]
        q_s = g_stable[:, None] + manifolds.sample_stable(rng, 2, 0.02)
        images = manifolds.chi(base_point, q_s, manifolds.base_orbit(base_point))[0]
        expected = manifolds.trinorm(images[:, 0] - images[:, 1]) / manifolds.trinorm(
            q_s[:, 0] - q_s[:, 1]
        )
        assert ladder.chi.lipschitz == pytest.approx(expected, rel=1e-9)

    def test_composition_can_fail(self):
        """A chi constant above Lip(theta) * Lip(psi) breaks the composition bound."""

        def estimate(name, lipschitz):
            return LipschitzEstimate(
                name=name, samples=4, lipschitz=lipschitz, scale=0.05, constant=lipschitz / 0.05
            )

        ladder = LipschitzLadder(
            theta=estimate("theta", 0.1),
            psi=estimate("psi", 0.2),
            chi=estimate("chi", 0.03),
            sequence=estimate("Theta", 0.1),
        )
        assert not ladder.composition_holds
        assert LipschitzLadder(
            theta=ladder.theta, psi=ladder.psi, chi=estimate("chi", 0.01), sequence=ladder.sequence
        ).composition_holds


class TestShadowing:
    """Tests for finite_dim_approx."""

    def test_shadow_decay_rate(self, manifolds, semiflow, lab):
        """The distance to the shadow orbit decays at least at rate lambda_-."""
        horizon = lab.settings.shadow_horizon
        record = semiflow.with_truncation(False).trajectory(
            manifolds.shadow_datum(), horizon, lab.settings.record_every
        )
        result = manifolds.finite_dim_approx(record, horizon)
        assert result.report.passed
        assert result.report.t0 == 0.0
        assert result.report.schema_version == "1.0"
        assert list(result.to_frame().columns) == ["t", "difference"]

    def test_start_on_center_manifold(self, manifolds, semiflow, gap):
        """A trajectory starting on W_c is its own shadow up to 10 tol."""
        tol = manifolds.tol
        start = manifolds.manifold_point(np.full(manifolds.K, 1e-4)).field
        record = semiflow.with_truncation(False).trajectory(start, 4.0, 16)
        result = manifolds.finite_dim_approx(record, 4.0, tol)
        growth = gap.big_lambda_max ** (result.times - result.report.t0)
        assert np.all(result.difference <= 10.0 * tol * growth)

    def test_large_trajectory(self, manifolds, grid):
        """Trajectories that never become small are rejected."""
        record = TrajectoryRecord(
            times=np.arange(6.0),
            snapshots=np.ones((grid.n, 6)),
            norm_p1=np.ones(6),
            norm_inf=np.ones(6),
            sup_vgrad=np.zeros(6),
            trunc_active=np.ones(6, dtype=bool),
        )
        with pytest.raises(SmallnessError):
            manifolds.finite_dim_approx(record)
