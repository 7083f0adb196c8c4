"""
Unit tests for the Gaussian oracle, the dispersive ratio and the pseudo-conformal transform.
"""

import math

import numpy as np
import pytest

from nls_decay_lab.exceptions import CoverageError, GridError, ValidationError
from nls_decay_lab.grid import ComplexField, make_grid
from nls_decay_lab.norms import lp_norm, sup_norm
from nls_decay_lab.propagators import EquationSpec, SolverConfig, evolve, linear_propagate
from nls_decay_lab.transforms import (
    GaussianDatum,
    dispersive_limit,
    dispersive_ratio,
    gaussian_free_evolution,
    pseudo_conformal,
    pseudo_conformal_with_error,
)


class TestGaussianOracle:
    """Tests for the closed-form free evolution."""

    def test_matches_spectral_propagator_1d(self, grid_1d):
        """Test the oracle agrees with e^{itΔ} applied to the sampled datum."""
        g = GaussianDatum(1.0, 0.7 + 0.2j)
        exact = gaussian_free_evolution(g, 2.0, grid_1d)
        numeric = linear_propagate(g.sample(grid_1d), 2.0)
        np.testing.assert_allclose(numeric.values, exact.values, atol=1e-10)
        assert exact.time_stamp == 2.0

    def test_matches_spectral_propagator_off_centre_2d(self):
        """Test an off-centre 2d Gaussian."""
        grid = make_grid(2, 16.0, 128)
        g = GaussianDatum(1.5, 1.0, (1.0, -2.0))
        exact = gaussian_free_evolution(g, 1.0, grid)
        numeric = linear_propagate(g.sample(grid), 1.0)
        np.testing.assert_allclose(numeric.values, exact.values, atol=1e-10)

    def test_closed_form_norms(self, grid_1d):
        """Test sup_at and l1_norm against the samples."""
        g = GaussianDatum(2.0, 0.5)
        assert lp_norm(g.sample(grid_1d), 1) == pytest.approx(g.l1_norm(1), rel=1e-12)
        assert sup_norm(gaussian_free_evolution(g, 3.0, grid_1d)) == pytest.approx(g.sup_at(3.0, 1), rel=1e-12)

    def test_resolution_check(self):
        """Test under-resolved and oversized data are flagged."""
        assert GaussianDatum(1.0).check_resolution(make_grid(1, 32.0, 256))
        assert not GaussianDatum(0.1).check_resolution(make_grid(1, 32.0, 256))
        assert not GaussianDatum(8.0).check_resolution(make_grid(1, 32.0, 256))

    def test_invalid_datum(self):
        """Test nonpositive widths and mismatched centres."""
        with pytest.raises(ValidationError):
            GaussianDatum(0.0)
        with pytest.raises(GridError):
            GaussianDatum(1.0, 1.0, (0.0,)).sample(make_grid(2, 8.0, 32))


class TestDispersiveRatio:
    """Tests for ||e^{itΔ}u0||_inf t^{d/2} / ||u0||_1."""

    def test_limit(self):
        """Test the Gaussian ratio approaches (4 pi)^{-d/2} from below."""
        grid = make_grid(1, 128.0, 1024)
        ratio = dispersive_ratio(GaussianDatum(1.0).sample(grid), 10.0)
        assert ratio < dispersive_limit(1)
        assert ratio == pytest.approx(dispersive_limit(1), rel=1e-3)

    def test_limit_values(self):
        """Test (4 pi)^{-d/2} for d = 1, 2, 3."""
        assert dispersive_limit(2) == pytest.approx(1.0 / (4.0 * math.pi))
        assert dispersive_limit(3) == pytest.approx((4.0 * math.pi) ** -1.5)

    def test_errors(self, gaussian_1d):
        """Test t <= 0, a wrong dimension and a zero datum."""
        with pytest.raises(ValidationError):
            dispersive_ratio(gaussian_1d, 0.0)
        with pytest.raises(ValidationError):
            dispersive_ratio(gaussian_1d, 1.0, d=2)
        with pytest.raises(ValidationError):
            dispersive_ratio(ComplexField.zeros(gaussian_1d.grid), 1.0)


class TestPseudoConformal:
    """Tests for the pseudo-conformal transform of a free Gaussian."""

    @pytest.fixture(scope="class")
    def free_history(self):
        grid = make_grid(1, 32.0, 256)
        eq = EquationSpec(1, 5, nonlinear=False)
        return evolve(GaussianDatum(1.0).sample(grid), eq, SolverConfig(0.05, 1.0))

    @staticmethod
    def closed_form(t, x):
        # transform of exp(-x^2/2) under the free flow
        z = t - 2j
        return z ** -0.5 * np.exp(1j * x ** 2 / (4.0 * z))

    @pytest.mark.parametrize("t", [1.0, 1.25, 2.0])
    def test_matches_closed_form(self, free_history, t):
        """Test u(t) against the exact transformed Gaussian at snapshot times."""
        target = make_grid(1, 16.0, 128)
        result = pseudo_conformal_with_error(free_history, t, target)
        assert not result.interpolated
        assert result.interpolation_error == 0.0
        assert result.source_time == pytest.approx(1.0 / t)
        np.testing.assert_allclose(result.field.values, self.closed_form(t, target.axis()), atol=1e-10)

    def test_mass_preserved(self, free_history):
        """Test ||u(t)||_2 equals ||v(1/t)||_2."""
        result = pseudo_conformal_with_error(free_history, 2.0, make_grid(1, 32.0, 256))
        assert lp_norm(result.field, 2) == pytest.approx(result.source_l2, rel=1e-8)

    def test_interpolated_source(self, free_history):
        """Test an off-snapshot 1/t is interpolated and its error estimated."""
        result = pseudo_conformal_with_error(free_history, 3.0, make_grid(1, 16.0, 128))
        assert result.interpolated
        assert 0.0 < result.interpolation_error < 1e-2
        exact = self.closed_form(3.0, result.field.grid.axis())
        assert np.max(np.abs(result.field.values - exact)) < 1e-2

    def test_errors(self, free_history):
        """Test t <= 0, dimension and box mismatches and missing coverage."""
        with pytest.raises(ValidationError):
            pseudo_conformal(free_history, 0.0, make_grid(1, 16.0, 128))
        with pytest.raises(GridError):
            pseudo_conformal(free_history, 1.0, make_grid(2, 16.0, 32))
        with pytest.raises(GridError):
            pseudo_conformal(free_history, 1.0, make_grid(1, 64.0, 256))
        with pytest.raises(CoverageError):
            pseudo_conformal(free_history, 0.5, make_grid(1, 8.0, 64))
