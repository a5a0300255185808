"""Tests for the acceptance-check registry and the laboratory."""

import numpy as np
import pytest

from fastdiff.config import build_settings
from fastdiff.core.checks import CHECKS, run_checks
from fastdiff.core.lab import Laboratory, get_laboratory
from fastdiff.exceptions import ConfigurationError, ConvergenceError
from fastdiff.schemas import CheckResult


class TestLaboratory:
    """Tests for the Laboratory service."""

    def test_stages_are_cached(self, lab):
        """Each stage is computed once."""
        assert lab.decomp is lab.decomp
        assert lab.manifolds.semiflow is lab.semiflow

    def test_overrides_build_new_settings(self, lab):
        """with_overrides keeps the other settings."""
        other = lab.with_overrides(seed=7)
        assert other.settings.seed == 7
        assert other.settings.n == lab.settings.n

    def test_rejects_invalid_override(self, lab):
        """Overrides are validated."""
        with pytest.raises(ConfigurationError):
            lab.with_overrides(n=4)

    def test_rng_streams(self, lab):
        """Streams are reproducible and independent."""
        assert lab.rng(3).random() == lab.rng(3).random()
        assert lab.rng(3).random() != lab.rng(4).random()

    def test_initial_data(self, lab):
        """Datum families are scaled to the configured amplitude."""
        for datum in ("stable", "unstable", "mixed"):
            h0 = lab.initial_datum(datum)
            assert np.max(np.abs(h0)) == pytest.approx(lab.settings.amplitude)
        np.testing.assert_allclose(lab.initial_datum("unstable"), lab.settings.amplitude)

    def test_get_laboratory_singleton(self):
        """get_laboratory returns a singleton."""
        assert get_laboratory() is get_laboratory()


class TestRunChecks:
    """Tests for run_checks."""

    def test_registry_names(self):
        """Fourteen named checks."""
        assert len(CHECKS) == 14
        assert list(CHECKS)[0] == "structural_eigenpair"
        assert "shadowing" in CHECKS

    def test_spectral_checks_pass(self, lab):
        """The cheap structural checks pass on the coarse grid."""
        summary = run_checks(lab, ["structural_eigenpair", "self_adjointness", "gap_ladder"])
        assert summary.passed
        assert [check.name for check in summary.checks] == [
            "structural_eigenpair",
            "self_adjointness",
            "gap_ladder",
        ]
        assert summary.config["n"] == lab.settings.n
        assert summary.schema_version == "1.0"

    def test_unknown_check(self, lab):
        """Unknown names are configuration errors."""
        with pytest.raises(ConfigurationError, match="unknown checks"):
            run_checks(lab, ["no_such_check"])

    def test_numerical_failure_fails_check(self, lab, monkeypatch):
        """Errors inside a check become a failed result."""

        def failing(_lab):
            raise ConvergenceError("did not converge", iterations=3)

        monkeypatch.setitem(CHECKS, "failing", failing)
        summary = run_checks(lab, ["failing"])
        assert not summary.passed
        assert summary.checks[0].detail.startswith("ConvergenceError")

    def test_failed_measurement(self, lab, monkeypatch):
        """A failing verdict fails the summary."""
        monkeypatch.setitem(
            CHECKS, "always_fails", lambda _lab: CheckResult(name="always_fails", passed=False)
        )
        summary = run_checks(lab, ["gap_ladder", "always_fails"])
        assert not summary.passed
        assert summary.checks[0].passed

    @pytest.mark.slow
    def test_all_checks_at_default_resolution(self):
        """Every acceptance check passes with the default settings."""
        summary = run_checks(Laboratory(build_settings()))
        assert [check.name for check in summary.checks if not check.passed] == []
