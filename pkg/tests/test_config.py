"""
Tests for environment-driven configuration.
"""

from nls_decay_lab.config import Config, get_config, reset_config
from nls_decay_lab.experiment import parse_config_dict


class TestConfig:
    """Tests for Config and the global instance."""

    def test_defaults(self, monkeypatch):
        """Test the documented defaults."""
        for name in ("SOLVER_DT", "SOLVER_ENERGY_DRIFT_THRESHOLD", "SOLVER_DUHAMEL_SIGN", "SUP_UPSAMPLE_FACTOR",
                     "WRAP_WIDTH_FACTOR", "SPECTRAL_TAIL_TOLERANCE", "RUNNER_CHECKPOINT_SECONDS",
                     "RUNNER_MAX_SNAPSHOTS", "SOLVER_DEALIAS_QUINTIC"):
            monkeypatch.delenv(name, raising=False)
        config = Config()
        assert config.solver.dt == 1e-3
        assert config.solver.energy_drift_threshold == 1e-6
        assert config.solver.duhamel_sign == -1
        assert config.solver.dealias_quintic
        assert config.numerics.sup_upsample_factor == 2
        assert config.numerics.wrap_width_factor == 3.0
        assert config.numerics.spectral_tail_tolerance == 1e-10
        assert config.runner.checkpoint_seconds == 300.0
        assert config.runner.max_snapshots == 1000

    def test_environment_overrides(self, monkeypatch):
        """Test variables are read when the global instance is rebuilt."""
        monkeypatch.setenv("SOLVER_DEALIAS_QUINTIC", "false")
        monkeypatch.setenv("RUNNER_WORKERS", "4")
        monkeypatch.setenv("SUP_UPSAMPLE_FACTOR", "4")
        reset_config()
        config = get_config()
        assert not config.solver.dealias_quintic
        assert config.runner.workers == 4
        assert config.numerics.sup_upsample_factor == 4
        assert get_config() is config

    def test_output_root_from_fixture(self, tmp_path):
        """Test the isolated output root is picked up."""
        assert get_config().runner.output_root == str(tmp_path / "runs")


class TestSolverStepDefault:
    """Tests for SOLVER_DT as the experiment step when solver.dt is left out."""

    def test_unset_dt_follows_environment(self, monkeypatch):
        """Test a decay experiment without solver.dt takes SOLVER_DT."""
        monkeypatch.setenv("SOLVER_DT", "5e-4")
        reset_config()
        cfg = parse_config_dict({"schema_version": 1, "scenario": "decay-2d-quintic"})
        assert cfg.solver.dt == 5e-4
        assert cfg.solver_config().dt == 5e-4

    def test_explicit_and_scenario_dt_win(self, monkeypatch):
        """Test the file value and the scenario defaults override SOLVER_DT."""
        monkeypatch.setenv("SOLVER_DT", "5e-4")
        reset_config()
        explicit = parse_config_dict({"schema_version": 1, "scenario": "decay-2d-quintic",
                                      "solver": {"dt": 2e-3}})
        assert explicit.solver.dt == 2e-3
        assert parse_config_dict({"schema_version": 1, "scenario": "linear-dispersive"}).solver.dt == 0.05

    def test_step_is_part_of_the_hash(self, monkeypatch):
        """Test a different SOLVER_DT gives a different configuration hash."""
        payload = {"schema_version": 1, "scenario": "decay-2d-quintic"}
        monkeypatch.setenv("SOLVER_DT", "1e-3")
        reset_config()
        first = parse_config_dict(payload).hash()
        monkeypatch.setenv("SOLVER_DT", "5e-4")
        reset_config()
        assert parse_config_dict(payload).hash() != first
