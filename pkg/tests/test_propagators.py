"""
Unit tests for the free propagator, the split-step integrator and trajectory histories.
"""

import math

import numpy as np
import pytest

from nls_decay_lab.exceptions import CoverageError, GridError, SimulationError, ValidationError
from nls_decay_lab.grid import make_grid, sample_function
from nls_decay_lab.norms import energy, lp_norm, mass
from nls_decay_lab.propagators import (
    EquationSpec,
    SolverConfig,
    SolverState,
    TrajectoryHistory,
    evolve,
    evolve_with_retry,
    linear_propagate,
    load_history,
    nonlinear_phase_step,
    relative_energy_drift,
    save_history,
    strang_step,
    validity_window,
)
from nls_decay_lab.transforms import GaussianDatum


class TestEquationSpec:
    """Tests for the equation description."""

    def test_labels_and_criticality(self):
        """Test labels and the mass/energy-critical flags."""
        assert EquationSpec(3, 5).label == "3d-quintic"
        assert EquationSpec(2, 5, nonlinear=False).label == "2d-linear"
        assert EquationSpec(2, 3).is_mass_critical
        assert EquationSpec(1, 5).is_mass_critical
        assert EquationSpec(3, 5).is_energy_critical
        assert not EquationSpec(3, 3).is_energy_critical

    def test_extension_flag(self):
        """Test only the three headline nonlinear models are not extensions."""
        assert not EquationSpec(3, 5).is_extension
        assert not EquationSpec(2, 5).is_extension
        assert EquationSpec(1, 5).is_extension
        assert EquationSpec(3, 5, nonlinear=False).is_extension

    @pytest.mark.parametrize("kwargs", [{"dimension": 4, "exponent": 5},
                                        {"dimension": 3, "exponent": 7},
                                        {"dimension": 3, "exponent": 5, "sign": -1}])
    def test_rejects_unsupported(self, kwargs):
        """Test unsupported dimension, exponent and the focusing sign."""
        with pytest.raises(ValidationError):
            EquationSpec(**kwargs)

    def test_dict_round_trip(self):
        """Test to_dict / from_dict."""
        eq = EquationSpec(2, 3, nonlinear=False)
        assert EquationSpec.from_dict(eq.to_dict()) == eq


class TestSolverConfig:
    """Tests for the time-stepping parameters."""

    def test_steps_reconstruct_t_end(self):
        """Test the step count and that the last step lands on t_end."""
        cfg = SolverConfig(1e-3, 1.0, 10)
        assert cfg.steps == 1000
        assert cfg.time_at(cfg.steps) == 1.0
        assert cfg.time_at(10) == pytest.approx(0.01)

    def test_t_end_must_be_a_multiple_of_dt(self):
        """Test dt must divide t_end."""
        with pytest.raises(ValidationError):
            SolverConfig(0.3, 1.0)

    def test_snapshot_count_includes_both_ends(self):
        """Test the count with a cadence that does not divide the steps."""
        cfg = SolverConfig(0.1, 1.0, 3)
        # steps 0, 3, 6, 9 and the forced last step 10
        assert cfg.snapshot_count() == 5

    def test_halved_keeps_snapshot_times(self):
        """Test halving dt doubles the cadence."""
        cfg = SolverConfig(0.1, 1.0, 2).halved()
        assert cfg.dt == pytest.approx(0.05)
        assert cfg.snapshot_cadence == 4
        assert cfg.time_at(4) == pytest.approx(0.2)

    def test_dealiasing_default(self):
        """Test the mask is on by default for quintic and off for cubic."""
        cfg = SolverConfig(0.1, 1.0)
        assert cfg.uses_dealiasing(EquationSpec(3, 5))
        assert not cfg.uses_dealiasing(EquationSpec(3, 3))
        assert not SolverConfig(0.1, 1.0, dealiasing=False).uses_dealiasing(EquationSpec(3, 5))


class TestLinearPropagate:
    """Tests for the free propagator."""

    def test_unitary(self, gaussian_1d):
        """Test the L2 norm is preserved."""
        u = linear_propagate(gaussian_1d, 3.7)
        assert lp_norm(u, 2) == pytest.approx(lp_norm(gaussian_1d, 2), rel=1e-13)

    def test_group_property_and_inverse(self, gaussian_1d):
        """Test e^{isΔ}e^{itΔ} = e^{i(s+t)Δ} and negative times invert."""
        a = linear_propagate(linear_propagate(gaussian_1d, 0.4), 0.9)
        b = linear_propagate(gaussian_1d, 1.3)
        np.testing.assert_allclose(a.values, b.values, atol=1e-13)
        back = linear_propagate(b, -1.3)
        np.testing.assert_allclose(back.values, gaussian_1d.values, atol=1e-13)

    def test_zero_time_copies(self, gaussian_1d):
        """Test t = 0 returns an equal but independent field."""
        u = linear_propagate(gaussian_1d, 0.0)
        assert u is not gaussian_1d
        assert np.array_equal(u.values, gaussian_1d.values)

    def test_time_stamp_advances(self, grid_1d):
        """Test a stamped field comes back stamped at t0 + t."""
        f = GaussianDatum(1.0).sample(grid_1d)
        assert linear_propagate(f, 0.5).time_stamp == pytest.approx(0.5)

    def test_plane_wave_phase(self):
        """Test a lattice plane wave picks up exp(-i k^2 t)."""
        grid = make_grid(1, math.pi, 16)
        f = sample_function(grid, lambda x: np.exp(3j * x))
        u = linear_propagate(f, 0.2)
        np.testing.assert_allclose(u.values, f.values * np.exp(-9j * 0.2), atol=1e-12)


class TestSplitStep:
    """Tests for the nonlinear phase step and Strang splitting."""

    def test_phase_step_preserves_modulus(self, gaussian_1d):
        """Test the exact phase rotation keeps |u| pointwise."""
        v = nonlinear_phase_step(gaussian_1d * 2.0, 0.3, EquationSpec(1, 5))
        np.testing.assert_allclose(np.abs(v.values), 2.0 * np.abs(gaussian_1d.values), atol=1e-14)

    def test_phase_step_sign(self, grid_1d):
        """Test a constant field rotates by exp(-i|u|^{q-1} dt)."""
        f = sample_function(grid_1d, lambda x: np.full_like(x, 2.0))
        v = nonlinear_phase_step(f, 0.1, EquationSpec(1, 3))
        np.testing.assert_allclose(v.values, 2.0 * np.exp(-0.4j))

    def test_phase_step_off_for_free_equation(self, gaussian_1d):
        """Test the phase step is the identity when the nonlinearity is off."""
        v = nonlinear_phase_step(gaussian_1d, 0.3, EquationSpec(1, 5, nonlinear=False))
        assert np.array_equal(v.values, gaussian_1d.values)

    def test_step_is_reversible(self, gaussian_1d):
        """Test a step of -dt undoes a step of dt."""
        eq = EquationSpec(1, 5)
        u = strang_step(gaussian_1d, 0.01, eq)
        back = strang_step(u, -0.01, eq)
        np.testing.assert_allclose(back.values, gaussian_1d.values, atol=1e-13)

    def test_mass_conserved_without_mask(self, gaussian_1d):
        """Test Strang steps are unitary in L2."""
        eq = EquationSpec(1, 5)
        u = gaussian_1d
        for _ in range(20):
            u = strang_step(u, 0.01, eq)
        assert mass(u) == pytest.approx(mass(gaussian_1d), rel=1e-12)

    def test_second_order_convergence(self):
        """Test the error against a fine reference drops fourfold per halving of dt."""
        grid = make_grid(1, 16.0, 64)
        eq = EquationSpec(1, 5)
        u0 = GaussianDatum(2.0, 0.5).sample(grid)

        def integrate(dt, steps):
            u = u0
            for _ in range(steps):
                u = strang_step(u, dt, eq)
            return u

        reference = integrate(0.4 / 1280, 1280)
        errors = [lp_norm(integrate(0.4 / n, n) - reference, 2) for n in (10, 20, 40)]
        ratios = [errors[0] / errors[1], errors[1] / errors[2]]
        assert all(3.5 <= r <= 4.5 for r in ratios)

    def test_small_amplitude_is_free_flow(self):
        """Test Strang steps of a 1e-6 datum reproduce e^{itΔ} to 1e-10."""
        grid = make_grid(2, 16.0, 32)
        eq = EquationSpec(2, 5)
        u0 = GaussianDatum(2.0, 1e-6).sample(grid)
        u = u0
        for _ in range(20):
            u = strang_step(u, 0.01, eq)
        free = linear_propagate(u0, 0.2)
        assert lp_norm(u - free, 2) <= 1e-10 * lp_norm(free, 2)


class TestEvolve:
    """Tests for the integrator driver."""

    def setup_method(self):
        self.grid = make_grid(2, 16.0, 32)
        self.eq = EquationSpec(2, 5)
        self.u0 = GaussianDatum(2.0, 0.3).sample(self.grid)

    def test_snapshot_cadence(self):
        """Test snapshots at t = 0, every cadence, and the end."""
        history = evolve(self.u0, self.eq, SolverConfig(0.01, 0.25, 10))
        np.testing.assert_allclose(history.times, [0.0, 0.1, 0.2, 0.25])
        assert history.solver.dt == 0.01

    def test_observers_called_every_step(self):
        """Test observers see t = 0 and each step."""
        seen = []
        evolve(self.u0, self.eq, SolverConfig(0.01, 0.05), [lambda t, f: seen.append(t)])
        np.testing.assert_allclose(seen, [0.0, 0.01, 0.02, 0.03, 0.04, 0.05])

    def test_deterministic(self):
        """Test two runs give bit-identical snapshots."""
        cfg = SolverConfig(0.01, 0.1, 5)
        a = evolve(self.u0, self.eq, cfg)
        b = evolve(self.u0, self.eq, cfg)
        for (_, fa), (_, fb) in zip(a.snapshots, b.snapshots):
            assert np.array_equal(fa.values, fb.values)

    def test_resume_matches_uninterrupted(self):
        """Test resuming from a saved state reproduces the single run."""
        cfg = SolverConfig(0.01, 0.1, 2)
        states = []

        def capture(state):
            if state.step == 4:
                states.append(SolverState(state.step, state.field.copy(), TrajectoryHistory(
                    state.history.equation, state.history.grid, list(state.history.snapshots),
                    state.history.initial_datum, state.history.solver)))

        full = evolve(self.u0, self.eq, cfg, checkpoint=capture)
        resumed = evolve(self.u0, self.eq, cfg, state=states[0])
        np.testing.assert_array_equal(full.times, resumed.times)
        assert np.array_equal(full.snapshots[-1][1].values, resumed.snapshots[-1][1].values)

    def test_dimension_mismatch(self):
        """Test the datum dimension must match the equation."""
        with pytest.raises(GridError):
            evolve(self.u0, EquationSpec(3, 5), SolverConfig(0.01, 0.1))

    def test_energy_drift_shrinks_with_dt(self):
        """Test halving dt reduces the energy drift at least twofold."""
        u0 = self.u0 * 3.0
        coarse = relative_energy_drift(evolve(u0, self.eq, SolverConfig(0.02, 0.4, 1, dealiasing=False)))
        fine = relative_energy_drift(evolve(u0, self.eq, SolverConfig(0.01, 0.4, 2, dealiasing=False)))
        assert fine < 0.5 * coarse

    def test_retry_gives_up_after_one_halving(self):
        """Test an unreachable threshold raises after the single retry."""
        with pytest.raises(SimulationError):
            evolve_with_retry(self.u0 * 3.0, self.eq, SolverConfig(0.02, 0.1, dealiasing=False), threshold=0.0)

    def test_retry_returns_used_config(self):
        """Test a satisfied threshold returns the original configuration."""
        cfg = SolverConfig(0.01, 0.05, dealiasing=False)
        history, used = evolve_with_retry(self.u0, self.eq, cfg, threshold=1.0)
        assert used == cfg
        assert energy(history.snapshots[-1][1], self.eq) > 0

    def test_retry_builds_observers_per_attempt(self):
        """Test the factory sees each attempt and on_retry gets the halved config."""
        attempts, retries, seen = [], [], {0: 0, 1: 0}

        def factory(attempt):
            attempts.append(attempt)
            return [lambda t, f: seen.__setitem__(attempt, seen[attempt] + 1)]

        cfg = SolverConfig(0.02, 0.1, dealiasing=False)
        with pytest.raises(SimulationError) as info:
            evolve_with_retry(self.u0 * 3.0, self.eq, cfg, factory, threshold=0.0,
                              on_retry=lambda drift, halved: retries.append(halved))
        assert attempts == [0, 1]
        assert seen == {0: 6, 1: 11}
        assert retries == [cfg.halved()]
        assert "after halving dt" in str(info.value)

    def test_retry_disabled_or_already_used(self):
        """Test no halving without retry, nor when starting in the halved attempt."""
        attempts = []

        def factory(attempt):
            attempts.append(attempt)
            return []

        cfg = SolverConfig(0.02, 0.1, dealiasing=False)
        with pytest.raises(SimulationError):
            evolve_with_retry(self.u0 * 3.0, self.eq, cfg, factory, threshold=0.0, retry=False)
        with pytest.raises(SimulationError):
            evolve_with_retry(self.u0 * 3.0, self.eq, cfg.halved(), factory, threshold=0.0, start_attempt=1)
        assert attempts == [0, 1]


class TestTrajectoryHistory:
    """Tests for history bookkeeping and persistence."""

    def setup_method(self):
        self.grid = make_grid(1, 8.0, 32)
        self.history = evolve(GaussianDatum(1.0).sample(self.grid), EquationSpec(1, 3), SolverConfig(0.05, 0.5, 2))

    def test_times_must_increase(self):
        """Test appending a non-increasing time fails."""
        with pytest.raises(ValidationError):
            self.history.append(0.1, self.history.snapshots[-1][1])

    def test_field_at_and_coverage(self):
        """Test lookup by time and the error for a missing time."""
        assert self.history.field_at(0.2).time_stamp == pytest.approx(0.2)
        with pytest.raises(CoverageError):
            self.history.field_at(0.15)

    def test_indices_between(self):
        """Test the closed-interval index query."""
        assert self.history.indices_between(0.1, 0.3) == [1, 2, 3]

    def test_save_load_round_trip(self, tmp_path):
        """Test a history reloads with identical snapshots and solver."""
        self.history.validity_window = 2.5
        save_history(self.history, tmp_path / "h")
        back = load_history(tmp_path / "h")
        assert back.equation == self.history.equation
        assert back.solver == self.history.solver
        assert back.validity_window == 2.5
        np.testing.assert_array_equal(back.times, self.history.times)
        for (_, a), (_, b) in zip(back.snapshots, self.history.snapshots):
            assert np.array_equal(a.values, b.values)


class TestValidityWindow:
    """Tests for the wrap-around estimate."""

    def test_gaussian_width_recovered(self):
        """Test the RMS width maps back to the Gaussian sigma."""
        grid = make_grid(2, 32.0, 128)
        window = validity_window(GaussianDatum(2.0).sample(grid))
        assert window.sigma == pytest.approx(2.0, rel=1e-6)
        assert 0 < window.t_wrap < math.inf

    def test_wider_box_gives_longer_window(self):
        """Test the window grows with the box."""
        g = GaussianDatum(1.0)
        small = validity_window(g.sample(make_grid(1, 16.0, 128))).t_wrap
        large = validity_window(g.sample(make_grid(1, 32.0, 256))).t_wrap
        assert large > small

    def test_zero_datum(self):
        """Test the zero field never wraps."""
        from nls_decay_lab.grid import ComplexField

        assert validity_window(ComplexField.zeros(make_grid(1, 4.0, 8))).t_wrap == math.inf
