"""
Unit tests for norms, decay traces, power-law fits and Strichartz integrals.
"""

import math
import unittest

import numpy as np
import pytest
from scipy.integrate import trapezoid

from nls_decay_lab.exceptions import QuadratureError, ValidationError
from nls_decay_lab.grid import ComplexField, make_grid, sample_function
from nls_decay_lab.norms import (
    DecayObserver,
    DecayTrace,
    StrichartzMeter,
    energy,
    fit_decay_exponent,
    fit_power_law,
    gradient_l2,
    gradient_sup,
    lp_norm,
    mass,
    max_relative_deviation,
    plateau_change,
    sobolev_norm,
    strichartz_tail,
    sup_norm,
    update_decay_trace,
)
from nls_decay_lab.propagators import EquationSpec, SolverConfig, evolve
from nls_decay_lab.transforms import GaussianDatum


class TestGaussianNorms(unittest.TestCase):
    """Tests for the norms of exp(-x^2/2) against closed forms."""

    def setUp(self):
        self.grid = make_grid(1, 32.0, 256)
        self.f = sample_function(self.grid, lambda x: np.exp(-x ** 2 / 2.0))

    def test_lebesgue_norms(self):
        """Test L1, L2 and sup."""
        self.assertAlmostEqual(lp_norm(self.f, 1), math.sqrt(2 * math.pi), places=12)
        self.assertAlmostEqual(lp_norm(self.f, 2) ** 2, math.sqrt(math.pi), places=12)
        self.assertEqual(sup_norm(self.f), 1.0)

    def test_refined_sup_not_below_grid_sup(self):
        """Test upsampling can only find a larger maximum."""
        shifted = sample_function(self.grid, lambda x: np.exp(-(x - 0.1) ** 2 / 2.0))
        self.assertGreaterEqual(sup_norm(shifted, refine=True), sup_norm(shifted))
        self.assertAlmostEqual(sup_norm(shifted, refine=True), 1.0, places=2)

    def test_gradient_and_sobolev(self):
        """Test ||f'||_2^2 = sqrt(pi)/2 and H^0 = L2."""
        self.assertAlmostEqual(gradient_l2(self.f) ** 2, math.sqrt(math.pi) / 2.0, places=10)
        self.assertAlmostEqual(sobolev_norm(self.f, 0.0), lp_norm(self.f, 2), places=12)
        self.assertAlmostEqual(sobolev_norm(self.f, 1.0) ** 2, 1.5 * math.sqrt(math.pi), places=10)

    def test_gradient_sup(self):
        """Test max |x exp(-x^2/2)| = exp(-1/2) up to grid resolution."""
        self.assertAlmostEqual(gradient_sup(self.f), math.exp(-0.5), places=2)

    def test_mass_and_energy(self):
        """Test mass and the kinetic plus potential energy."""
        self.assertAlmostEqual(mass(self.f), math.sqrt(math.pi), places=12)
        free = energy(self.f, EquationSpec(1, 3, nonlinear=False))
        self.assertAlmostEqual(free, math.sqrt(math.pi) / 4.0, places=10)
        cubic = energy(self.f, EquationSpec(1, 3))
        # ∫ exp(-2x^2) / 4
        self.assertAlmostEqual(cubic - free, math.sqrt(math.pi / 2.0) / 4.0, places=10)

    def test_invalid_exponents(self):
        """Test p < 1 and s < 0 are rejected."""
        with self.assertRaises(ValidationError):
            lp_norm(self.f, 0.5)
        with self.assertRaises(ValidationError):
            sobolev_norm(self.f, -1.0)


class TestDecayTrace:
    """Tests for trace records, CSV persistence and the running maximum."""

    def test_weight_uses_half_dimension(self, grid_1d):
        """Test weighted = t^{d/2} sup."""
        f = sample_function(grid_1d, lambda x: np.full_like(x, 0.5))
        trace = update_decay_trace(DecayTrace(), 4.0, f, 3)
        assert trace.weighted == [pytest.approx(0.5 * 8.0)]

    def test_running_maximum(self, grid_1d):
        """Test A is the running maximum of the weighted values."""
        trace = DecayTrace()
        for t, level in [(1.0, 1.0), (2.0, 0.1), (3.0, 0.5)]:
            update_decay_trace(trace, t, sample_function(grid_1d, lambda x, c=level: np.full_like(x, c)), 2)
        assert trace.weighted == pytest.approx([1.0, 0.2, 1.5])
        assert trace.A_running == pytest.approx([1.0, 1.0, 1.5])
        assert trace.final_A == pytest.approx(1.5)
        trace.check()

    def test_times_must_increase(self, gaussian_1d):
        """Test a repeated time is rejected."""
        trace = update_decay_trace(DecayTrace(), 1.0, gaussian_1d, 1)
        with pytest.raises(ValidationError):
            update_decay_trace(trace, 1.0, gaussian_1d, 1)

    def test_check_detects_bad_traces(self):
        """Test unequal lengths and a decreasing A fail the check."""
        with pytest.raises(ValidationError):
            DecayTrace([1.0, 2.0], [1.0], [1.0, 1.0], [1.0, 1.0]).check()
        with pytest.raises(ValidationError):
            DecayTrace([1.0, 2.0], [1.0, 1.0], [1.0, 1.0], [2.0, 1.0]).check()

    def test_csv_round_trip(self, tmp_path):
        """Test the CSV keeps column order and exact values."""
        trace = DecayTrace([0.1, 0.2], [1.0 / 3.0, 0.25], [0.1 / 3.0, 0.05], [0.1 / 3.0, 0.05],
                           {"energy": [2.0, 2.0], "mass": [1.0, 1.0]})
        path = trace.to_csv(tmp_path / "trace.csv")
        header = path.read_text().splitlines()[0]
        assert header == "t,sup,weighted,A,mass,energy"
        back = DecayTrace.from_csv(path)
        assert back.sup_norms == trace.sup_norms
        assert back.extras["mass"] == [1.0, 1.0]

    def test_missing_columns(self, tmp_path):
        """Test a CSV without the core columns is rejected."""
        path = tmp_path / "bad.csv"
        path.write_text("t,sup\n1,2\n")
        with pytest.raises(ValidationError):
            DecayTrace.from_csv(path)

    def test_observer_cadence(self, grid_1d):
        """Test the observer records every k-th call with extras."""
        eq = EquationSpec(1, 3)
        observer = DecayObserver(eq, every=2, sobolev_index=1.0)
        history = evolve(GaussianDatum(1.0).sample(grid_1d), eq, SolverConfig(0.01, 0.05), [observer])
        assert observer.trace.times == pytest.approx([0.0, 0.02, 0.04])
        assert set(observer.trace.extras) == {"mass", "energy", "Hs"}
        assert observer.trace.extras["mass"][0] == pytest.approx(mass(history.initial_datum))


class TestPowerLawFit:
    """Tests for the log-log least-squares fit."""

    def test_exact_power_law(self):
        """Test an exact power law is recovered with zero error."""
        t = np.geomspace(1.0, 10.0, 20)
        fit = fit_power_law(t, 3.0 * t ** -1.5, (1.0, 10.0))
        assert fit.slope == pytest.approx(-1.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert fit.stderr == pytest.approx(0.0, abs=1e-12)
        assert fit.samples == 20

    def test_window_selects_samples(self):
        """Test only samples inside the window contribute."""
        t = np.linspace(0.5, 20.0, 40)
        values = np.where(t < 5.0, 1.0, t ** -1.0)
        trace = DecayTrace(list(t), list(values), list(values), list(values))
        slope, _ = fit_decay_exponent(trace, (5.0, 20.0))
        assert slope == pytest.approx(-1.0, abs=1e-12)

    def test_too_few_samples(self):
        """Test fewer than eight samples in the window is an error."""
        t = np.linspace(1.0, 2.0, 7)
        with pytest.raises(ValidationError):
            fit_power_law(t, t ** -1.0, (1.0, 2.0))

    def test_nonpositive_values(self):
        """Test a zero norm cannot be fitted on a log scale."""
        t = np.linspace(1.0, 2.0, 10)
        with pytest.raises(ValidationError):
            fit_power_law(t, np.zeros_like(t), (1.0, 2.0))


class TestPlateau:
    """Tests for plateau_change and max_relative_deviation."""

    def test_flat_tail(self):
        """Test a constant A has zero change."""
        t = list(np.linspace(1.0, 10.0, 10))
        trace = DecayTrace(t, [1.0] * 10, [1.0] * 10, [1.0] * 10)
        assert plateau_change(trace, (1.0, 10.0)) == 0.0

    def test_growing_tail(self):
        """Test growth over the last fifth of the window."""
        t = list(np.linspace(1.0, 11.0, 11))
        A = [1.0] * 9 + [1.5, 2.0]
        trace = DecayTrace(t, A, A, A)
        # cut at 9.0, so the change is measured from A(9) = 1 to A(11) = 2
        assert plateau_change(trace, (1.0, 11.0)) == pytest.approx(0.5)

    def test_empty_window(self):
        """Test a window without samples raises."""
        trace = DecayTrace([1.0], [1.0], [1.0], [1.0])
        with pytest.raises(ValidationError):
            plateau_change(trace, (2.0, 3.0))

    def test_max_relative_deviation(self):
        """Test the deviation is relative to the first value."""
        assert max_relative_deviation([2.0, 2.1, 1.8]) == pytest.approx(0.1)
        assert max_relative_deviation([]) == 0.0


class TestStrichartz:
    """Tests for the trapezoid Strichartz meter."""

    def _meter(self, grid, times, levels):
        meter = StrichartzMeter(2.0, 2.0)
        for t, c in zip(times, levels):
            meter.add(t, sample_function(grid, lambda x, c=c: np.full_like(x, c)))
        return meter

    def test_constant_integrand(self):
        """Test ∫ ||c||_2^2 dt over [a, b] is c^2 |box| (b - a)."""
        grid = make_grid(1, 1.0, 8)
        meter = self._meter(grid, [0.0, 0.3, 0.7, 1.0], [1.0] * 4)
        assert meter.integral(0.1, 0.9) == pytest.approx(2.0 * 0.8)

    def test_additive_across_interior_points(self):
        """Test integrals over adjacent intervals add up."""
        grid = make_grid(1, 1.0, 8)
        meter = self._meter(grid, [0.0, 0.3, 0.7, 1.0], [1.0, 2.0, 0.5, 1.5])
        whole = meter.integral(0.0, 1.0)
        parts = meter.integral(0.0, 0.5) + meter.integral(0.5, 1.0)
        assert parts == pytest.approx(whole, rel=1e-14)

    def test_pieces_match_piecewise_linear_integrand(self):
        """Test each piece against the trapezoid sum with the split point interpolated."""
        grid = make_grid(1, 1.0, 8)
        meter = self._meter(grid, [0.0, 0.3, 0.7, 1.0], [1.0, 2.0, 0.5, 1.5])
        # integrand 2 c^2: 2, 8, 0.5, 4.5; linear value 4.25 at t = 0.5
        assert meter.integral(0.0, 0.5) == pytest.approx(1.5 + 1.225, rel=1e-13)
        assert meter.integral(0.5) == pytest.approx(0.475 + 0.75, rel=1e-13)
        assert meter.integral(0.0) == pytest.approx(trapezoid([2.0, 8.0, 0.5, 4.5], [0.0, 0.3, 0.7, 1.0]),
                                                    rel=1e-13)

    def test_tail_shrinks(self):
        """Test the tail is nonincreasing in its start."""
        grid = make_grid(1, 1.0, 8)
        meter = self._meter(grid, [0.0, 0.5, 1.0, 1.5], [1.0, 0.8, 0.6, 0.4])
        tails = [meter.tail(s) for s in (0.0, 0.4, 1.0, 1.5)]
        assert all(a >= b for a, b in zip(tails, tails[1:]))
        assert tails[-1] == 0.0

    def test_errors(self):
        """Test too few records, out-of-range intervals and bad exponents."""
        grid = make_grid(1, 1.0, 8)
        with pytest.raises(QuadratureError):
            self._meter(grid, [0.0], [1.0]).integral(0.0)
        with pytest.raises(ValidationError):
            self._meter(grid, [0.0, 1.0], [1.0, 1.0]).integral(0.5, 2.0)
        with pytest.raises(ValidationError):
            StrichartzMeter(0.5, 2.0)
        with pytest.raises(ValidationError):
            StrichartzMeter.for_equation(EquationSpec(1, 5))

    def test_presets(self):
        """Test the scattering-norm exponents of the headline models."""
        meter = StrichartzMeter.for_equation(EquationSpec(3, 5))
        assert (meter.q, meter.r) == (10.0, 10.0)
        assert StrichartzMeter.for_equation(EquationSpec(3, 3)).q == 5.0
        assert StrichartzMeter.for_equation(EquationSpec(2, 5)).q == 8.0

    def test_history_tail_at_end_is_zero(self, grid_1d):
        """Test the tail starting at t_end vanishes."""
        history = evolve(GaussianDatum(1.0).sample(grid_1d), EquationSpec(1, 3), SolverConfig(0.05, 0.2))
        assert strichartz_tail(history, 0.2, 2.0, 2.0) == 0.0
        assert strichartz_tail(history, 0.0, 2.0, 2.0) > 0.0


class TestNormInequalities:
    """Tests for Hölder and Sobolev orderings on random fields."""

    def setup_method(self):
        self.grid = make_grid(2, 8.0, 32)
        rng = np.random.default_rng(11)
        shape = self.grid.shape
        self.f = ComplexField(self.grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        self.g = ComplexField(self.grid, rng.standard_normal(shape) * np.exp(rng.standard_normal(shape)))

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 6.0])
    def test_holder_product(self, p):
        """Test ||f g||_1 <= ||f||_p ||g||_p' for conjugate exponents."""
        product = ComplexField(self.grid, self.f.values * self.g.values)
        dual = p / (p - 1.0)
        assert lp_norm(product, 1) <= lp_norm(self.f, p) * lp_norm(self.g, dual) * (1.0 + 1e-12)

    def test_holder_endpoint(self):
        """Test ||f g||_1 <= ||f||_1 ||g||_inf."""
        product = ComplexField(self.grid, self.f.values * self.g.values)
        assert lp_norm(product, 1) <= lp_norm(self.f, 1) * sup_norm(self.g) * (1.0 + 1e-12)

    def test_log_convexity(self):
        """Test ||f||_3 <= ||f||_2^(1/2) ||f||_6^(1/2)."""
        for field in (self.f, self.g):
            bound = math.sqrt(lp_norm(field, 2) * lp_norm(field, 6))
            assert lp_norm(field, 3) <= bound * (1.0 + 1e-12)

    def test_sobolev_norm_nondecreasing_in_s(self):
        """Test H^s grows with s and starts at the L2 norm."""
        values = [sobolev_norm(self.f, s) for s in (0.0, 0.5, 1.0, 2.0, 3.0)]
        assert values[0] == pytest.approx(lp_norm(self.f, 2), rel=1e-12)
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert values[-1] > values[0]
