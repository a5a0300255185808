"""Tests for the truncated semiflow, trajectories and the original flow."""

import numpy as np
import pytest
from scipy.stats import linregress

from fastdiff.core.semiflow import (
    TrajectoryRecord,
    TruncatedSemiflow,
    fit_decay_rate,
    grad_bound_monitor,
    lipschitz_R,
    lipschitz_scaling,
    phi1,
    phi2,
    separated_datum,
    smooth_samples,
    solve_original_w,
    solve_relative_error,
    solve_rescaled_v,
    stability_constant,
)
from fastdiff.exceptions import AdmissibilityError, ConfigurationError


class TestPhiFunctions:
    """Tests for the exponential integrator weights."""

    def test_values(self):
        """phi_1 and phi_2 at 0 and 1."""
        z = np.array([0.0, 1.0])
        np.testing.assert_allclose(phi1(z), [1.0, np.e - 1.0])
        np.testing.assert_allclose(phi2(z), [0.5, np.e - 2.0])

    def test_phi2_series_branch(self):
        """The Taylor branch matches the closed form just below |z| = 1e-3."""
        z = 0.999e-3
        assert phi2(np.array([z]))[0] == pytest.approx((np.expm1(z) - z) / z**2, rel=1e-9)


class TestFitDecayRate:
    """Tests for fit_decay_rate."""

    def test_exponential(self):
        """exp(-2 t) decays at rate 2 with r^2 = 1."""
        t = np.linspace(0.0, 4.0, 9)
        rate, r2 = fit_decay_rate(t, 3.0 * np.exp(-2.0 * t))
        assert rate == pytest.approx(2.0)
        assert r2 == pytest.approx(1.0)

    def test_constant_series(self):
        """A constant series has rate 0 and r^2 = 1."""
        assert fit_decay_rate(np.arange(6.0), np.ones(6)) == (0.0, 1.0)

    def test_trailing_window(self):
        """Only the trailing points enter the fit."""
        t = np.arange(10.0)
        y = np.where(t < 5, np.exp(-t), np.exp(-4.0) * np.exp(-3.0 * (t - 4)))
        rate, _ = fit_decay_rate(t, y, window=5)
        assert rate == pytest.approx(3.0)

    def test_too_few_points(self):
        """Five points are required."""
        with pytest.raises(ConfigurationError):
            fit_decay_rate(np.arange(4.0), np.ones(4))

    def test_non_positive_values(self):
        """Logarithms need positive values."""
        with pytest.raises(ConfigurationError):
            fit_decay_rate(np.arange(5.0), np.array([1.0, 0.5, 0.0, 0.1, 0.1]))


class TestTruncatedSemiflow:
    """Tests for the time stepping of dh/dt + L h = M^eps(h)."""

    def test_zero_is_fixed(self, semiflow, grid):
        """S(0) = 0 and R(0) = 0 exactly."""
        zero = np.zeros(grid.n)
        assert np.all(semiflow.time_one_map(zero) == 0.0)
        assert np.all(semiflow.remainder_R(zero) == 0.0)

    def test_linear_regime(self, semiflow, decomp):
        """Tiny data follow e^{-L}."""
        h = 1e-8 * decomp.eigenfields[:, 2]
        image = semiflow.time_one_map(h)
        expected = np.exp(-decomp.eigenvalues[2]) * h
        assert decomp.norm(image - expected) <= 1e-6 * decomp.norm(h)

    def test_step_on_dead_cutoff(self, semiflow, lab):
        """h = 3 eps switches the cutoff off, leaving the linear flow of the constant mode."""
        h = 3.0 * lab.settings.eps * np.ones(semiflow.op.grid.n)
        expected = np.exp((lab.settings.p - 1.0) * semiflow.dt) * h
        np.testing.assert_allclose(semiflow.step(h), expected, rtol=1e-10)

    def test_batch_columns_independent(self, semiflow, decomp, lab):
        """Batched evaluation equals column-by-column evaluation."""
        data = smooth_samples(decomp, lab.rng(21), 2, 0.5 * lab.settings.eps)
        batch = semiflow.flow(data, 0.25)
        np.testing.assert_allclose(batch[:, 1], semiflow.flow(data[:, 1], 0.25), atol=1e-12)

    def test_time_lattice(self, semiflow):
        """Times must lie on the dt lattice."""
        assert semiflow.steps_for(1.0) == round(1.0 / semiflow.dt)
        with pytest.raises(ConfigurationError):
            semiflow.steps_for(0.3)

    def test_semigroup_property(self, semiflow, decomp, lab):
        """S_{1/2} S_{1/2} = S_1."""
        h = smooth_samples(decomp, lab.rng(22), 1, lab.settings.eps)[:, 0]
        np.testing.assert_allclose(
            semiflow.flow(semiflow.flow(h, 0.5), 0.5), semiflow.time_one_map(h), atol=1e-14
        )

    def test_rejects_large_dt(self, semiflow):
        """dt is bounded by 0.1."""
        with pytest.raises(ConfigurationError):
            TruncatedSemiflow(semiflow.decomp, semiflow.cfg, dt=0.5)

    def test_truncation_equivalence(self, semiflow, decomp, lab):
        """Truncated and untruncated trajectories coincide on small data."""
        eps = lab.settings.eps
        h0 = smooth_samples(decomp, lab.rng(23), 1, 0.2 * eps)[:, 0]
        truncated = semiflow.trajectory(h0, 1.0, 16)
        plain = semiflow.with_truncation(False).trajectory(h0, 1.0, 16)
        assert np.max(np.abs(truncated.snapshots - plain.snapshots)) <= 1e-10
        assert not np.any(plain.trunc_active)

    def test_picard_matches_stepping(self, semiflow, decomp, lab):
        """The Duhamel fixed point agrees with exponential stepping at t = 1."""
        h0 = smooth_samples(decomp, lab.rng(24), 1, 0.5 * lab.settings.eps)[:, 0]
        record, monitor = semiflow.picard_solve(h0)
        assert np.max(np.abs(record.snapshots[:, -1] - semiflow.time_one_map(h0))) <= 1e-5
        assert monitor.sweeps >= 2
        assert monitor.contraction_factor < 1.0

    def test_picard_horizon(self, semiflow, grid):
        """The Picard horizon is at most one."""
        with pytest.raises(ConfigurationError):
            semiflow.picard_solve(np.zeros(grid.n), T=2.0)

    def test_picard_from_zero(self, semiflow, grid):
        """The Picard iteration started at h0 = 0 stays at 0."""
        record, monitor = semiflow.picard_solve(np.zeros(grid.n))
        assert np.all(record.snapshots == 0.0)
        assert monitor.final_increment == 0.0

    def test_remainder_is_quadratic(self, semiflow, decomp):
        """||R(delta phi_2)|| scales like delta^2."""
        flow = semiflow.with_truncation(False)
        mode = decomp.eigenfields[:, 1] / np.max(np.abs(decomp.eigenfields[:, 1]))
        deltas = np.array([1e-1, 1e-2, 1e-3, 1e-4])
        sizes = [decomp.norm(flow.remainder_R(delta * mode)) for delta in deltas]
        fit = linregress(np.log(deltas), np.log(sizes))
        assert fit.slope == pytest.approx(2.0, abs=0.1)

    def test_second_order_in_dt(self, semiflow, decomp, lab):
        """Halving dt divides the step-to-step difference of S(h) by about 4."""
        h0 = lab.initial_datum("mixed", amplitude=0.04)
        images = [
            TruncatedSemiflow(decomp, semiflow.cfg, dt=dt, truncated=False).time_one_map(h0)
            for dt in (1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0)
        ]
        coarse = decomp.norm(images[0] - images[1])
        fine = decomp.norm(images[1] - images[2])
        assert 3.0 <= coarse / fine <= 5.0


class TestTrajectories:
    """Tests for recorded trajectories."""

    def test_record_layout(self, semiflow, lab):
        """Snapshots every record_every steps plus the final time."""
        h0 = lab.initial_datum("stable")
        record = solve_relative_error(semiflow, h0, 1.0, record_every=16)
        np.testing.assert_allclose(record.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert record.snapshots.shape == (semiflow.op.grid.n, 5)
        frame = record.to_frame()
        assert list(frame.columns) == ["t", "norm_p1", "norm_inf", "sup_VgradH", "trunc_active"]

    def test_stable_datum_decays(self, semiflow, lab):
        """The stable datum decays at rate lambda_2."""
        record = semiflow.trajectory(lab.initial_datum("stable", amplitude=1e-6), 2.0, 8)
        summary = record.summary()
        assert summary.fitted_rate == pytest.approx(lab.decomp.eigenvalues[1], rel=0.05)
        assert summary.schema_version == "1.0"

    def test_unstable_datum_grows(self, semiflow, lab):
        """The constant datum grows like e^{(p-1) t}."""
        record = semiflow.trajectory(lab.initial_datum("unstable"), 1.0, 16)
        assert record.norm_p1[-1] > 2.0 * record.norm_p1[0]

    def test_untruncated_admissibility(self, semiflow, grid):
        """Untruncated runs need 1 + h > 0."""
        with pytest.raises(AdmissibilityError):
            semiflow.with_truncation(False).trajectory(-2.0 * np.ones(grid.n), 1.0)

    def test_record_validation(self):
        """Time stamps increase strictly and match the snapshots."""
        with pytest.raises(ConfigurationError):
            TrajectoryRecord(
                times=np.array([0.0, 0.0]),
                snapshots=np.zeros((3, 2)),
                norm_p1=np.zeros(2),
                norm_inf=np.zeros(2),
                sup_vgrad=np.zeros(2),
                trunc_active=np.zeros(2, dtype=bool),
            )

    def test_rescaled_variable(self, semiflow, state, lab):
        """v = V (1 + h) runs through the untruncated flow."""
        h0 = lab.initial_datum("stable", amplitude=1e-3)
        record = solve_rescaled_v(semiflow, state.V * (1.0 + h0), 1.0)
        assert record.variable == "v"
        np.testing.assert_allclose(record.snapshots[:, 0], state.V * (1.0 + h0), atol=1e-12)

    def test_rescaled_rejects_non_positive(self, semiflow, state):
        """v0 must be positive inside."""
        with pytest.raises(AdmissibilityError):
            solve_rescaled_v(semiflow, -state.V, 1.0)

    def test_gradient_bound(self, semiflow, decomp, lab):
        """Small trajectories keep ||V grad h|| below eps late in time."""
        sample = smooth_samples(decomp, lab.rng(25), 1, 0.2 * lab.settings.eps)[:, 0]
        h0 = decomp.project(1, sample)[1]
        report = grad_bound_monitor(semiflow.trajectory(h0, 2.0, 16), lab.settings.eps)
        assert report.holds
        assert report.eps_star_empirical <= lab.settings.eps
        assert report.truncation_inactive

    def test_gradient_bound_reports_active_truncation(self, semiflow, lab):
        """A growing constant datum leaves the plateau and the report says so."""
        record = semiflow.trajectory(lab.initial_datum("unstable", amplitude=0.04), 1.0, 16)
        report = grad_bound_monitor(record, lab.settings.eps)
        assert report.eps_star_empirical == pytest.approx(0.04 * np.e, rel=1e-6)
        assert report.eps_star_empirical > lab.settings.eps
        assert not report.truncation_inactive
        assert record.trunc_active[-1] and not record.trunc_active[0]

    def test_combined_size_sets_eps_star(self, grid):
        """eps_star takes the larger of ||h||_inf and ||V grad h||_inf."""
        record = TrajectoryRecord(
            times=np.array([0.0, 1.0]),
            snapshots=np.zeros((grid.n, 2)),
            norm_p1=np.ones(2),
            norm_inf=np.array([0.01, 0.02]),
            sup_vgrad=np.array([0.03, 0.01]),
            trunc_active=np.zeros(2, dtype=bool),
        )
        report = grad_bound_monitor(record, 0.05)
        assert report.eps_star_empirical == 0.03
        assert report.sup_vgrad_late == 0.01
        assert report.truncation_inactive


class TestMeasurements:
    """Tests for the sampled stability and Lipschitz constants."""

    def test_stability_constant_finite(self, semiflow, lab):
        """The stability estimate holds with a finite constant."""
        assert np.isfinite(stability_constant(semiflow, lab.rng(26), pairs=4))

    def test_lipschitz_R(self, semiflow, lab):
        """Lip(R^eps) is a small multiple of eps."""
        estimate = lipschitz_R(semiflow, lab.rng(27), pairs=4)
        assert 0.0 < estimate.lipschitz
        assert estimate.constant == pytest.approx(estimate.lipschitz / lab.settings.eps)

    def test_lipschitz_scaling(self, semiflow, lab):
        """Lip(R^eps) grows roughly linearly in eps."""
        slope, estimates = lipschitz_scaling(semiflow, lab.rng(28), pairs=4)
        assert len(estimates) == 3
        assert 0.5 <= slope <= 1.5


class TestExtinction:
    """Tests for the original fast diffusion flow."""

    @pytest.fixture(scope="class")
    def run(self, state):
        return solve_original_w(separated_datum(state, 1.0), state, 1e-3)

    def test_extinction_time(self, run):
        """The separated datum extincts at T = 1."""
        report = run.report(1.0)
        assert report.relative_time_error <= 0.05
        assert report.mass_monotone

    def test_rescaled_profile(self, run):
        """The rescaled solution stays at V."""
        assert run.report(1.0).max_rescaled_deviation <= 1e-2

    def test_frame(self, run):
        """Mass and sup-norm table."""
        assert list(run.to_frame().columns) == ["tau", "mass", "sup_w"]

    def test_rejects_zero_datum(self, state):
        """w0 must be non-negative and nonzero."""
        with pytest.raises(AdmissibilityError):
            solve_original_w(np.zeros(state.grid.n), state, 1e-3)
