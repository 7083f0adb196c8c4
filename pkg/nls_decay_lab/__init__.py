"""
NLS Decay Lab

Pseudo-spectral simulation and verification of decay estimates for
defocusing nonlinear Schrödinger equations.
"""

__version__ = "0.1.0"
__author__ = "sanketkulkarni-1-sdk"

from nls_decay_lab.exceptions import (
    ConfigError,
    CoverageError,
    GridError,
    NLSLabError,
    QuadratureError,
    RunInterrupted,
    SimulationError,
    ValidationError,
)
from nls_decay_lab.grid import (
    ComplexField,
    FrequencyLattice,
    GridSpec,
    SpectralField,
    apply_multiplier,
    forward_transform,
    inverse_transform,
    make_grid,
    sample_function,
)
from nls_decay_lab.propagators import (
    EquationSpec,
    SolverConfig,
    TrajectoryHistory,
    evolve,
    linear_propagate,
    nonlinear_phase_step,
    strang_step,
)

__all__ = [
    "ComplexField",
    "ConfigError",
    "CoverageError",
    "EquationSpec",
    "FrequencyLattice",
    "GridError",
    "GridSpec",
    "NLSLabError",
    "QuadratureError",
    "RunInterrupted",
    "SimulationError",
    "SolverConfig",
    "SpectralField",
    "TrajectoryHistory",
    "ValidationError",
    "apply_multiplier",
    "evolve",
    "forward_transform",
    "inverse_transform",
    "linear_propagate",
    "make_grid",
    "nonlinear_phase_step",
    "sample_function",
    "strang_step",
]
