"""
Free Schrödinger propagator and the split-step integrator for

    i u_t + Δu = |u|^{q-1} u

on the periodic box. The free multiplier is ``exp(-i|k|^2 t)`` and the
nonlinear sub-flow is the exact phase rotation ``u exp(-i|u|^{q-1} dt)``.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import CoverageError, GridError, SimulationError, ValidationError
from nls_decay_lab.grid import (
    ComplexField,
    GridSpec,
    apply_multiplier,
    dealias_mask,
    forward_transform,
    inverse_transform,
    lattice_for,
    make_grid,
)
from nls_decay_lab.norms import energy
from nls_decay_lab.snapshots import load_field, save_field
from nls_decay_lab.utils import dump_json, load_json


logger = logging.getLogger(__name__)

HEADLINE_MODELS = {(3, 5): "3d-quintic", (3, 3): "3d-cubic", (2, 5): "2d-quintic"}
SUPPORTED_EXPONENTS = (3, 5)
TIME_TOLERANCE = 1e-12


@dataclass(frozen=True)
class EquationSpec:
    """
    Defocusing NLS ``i u_t + Δu = |u|^{q-1} u``.

    Attributes:
        dimension: Spatial dimension.
        exponent: q, with nonlinear term ``|u|^{q-1} u``.
        nonlinear: When False the nonlinear term is disabled (free equation).
        sign: Nonlinearity sign; only the defocusing +1 is supported.
    """

    dimension: int
    exponent: int
    nonlinear: bool = True
    sign: int = 1

    def __post_init__(self) -> None:
        if self.dimension not in (1, 2, 3):
            raise ValidationError(f"dimension {self.dimension} not in (1, 2, 3)")
        if self.exponent not in SUPPORTED_EXPONENTS:
            raise ValidationError(f"exponent {self.exponent} not in {SUPPORTED_EXPONENTS}")
        if self.sign != 1:
            raise ValidationError("Only the defocusing sign +1 is supported")

    @property
    def is_extension(self) -> bool:
        """True unless this is one of the three headline models with the nonlinearity on."""
        return not self.nonlinear or (self.dimension, self.exponent) not in HEADLINE_MODELS

    @property
    def is_mass_critical(self) -> bool:
        return (self.exponent - 1) * self.dimension == 4

    @property
    def is_energy_critical(self) -> bool:
        return self.dimension >= 3 and (self.exponent - 1) * (self.dimension - 2) == 4

    @property
    def label(self) -> str:
        if not self.nonlinear:
            return f"{self.dimension}d-linear"
        name = {3: "cubic", 5: "quintic"}[self.exponent]
        return f"{self.dimension}d-{name}"

    @property
    def decay_rate(self) -> float:
        """Exponent of the dispersive weight t^{d/2}."""
        return self.dimension / 2.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dimension": self.dimension,
            "exponent": self.exponent,
            "nonlinear": self.nonlinear,
            "sign": self.sign,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "EquationSpec":
        return cls(
            int(payload["dimension"]),
            int(payload["exponent"]),
            bool(payload.get("nonlinear", True)),
            int(payload.get("sign", 1)),
        )


@dataclass(frozen=True)
class SolverConfig:
    """
    Time stepping parameters.

    Attributes:
        dt: Step size.
        t_end: Final time; ``steps * dt`` reproduces it to 1e-12.
        snapshot_cadence: Store every k-th step (the final step is always stored).
        dealiasing: Two-thirds mask after each nonlinear sub-step; None picks
            the configured default (on for quintic).
    """

    dt: float
    t_end: float
    snapshot_cadence: int = 1
    dealiasing: Optional[bool] = None

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValidationError(f"t_end must be positive, got {self.t_end}")
        if int(self.snapshot_cadence) != self.snapshot_cadence or self.snapshot_cadence < 1:
            raise ValidationError(f"snapshot_cadence must be a positive integer, got {self.snapshot_cadence}")
        if abs(self.steps * self.dt - self.t_end) > TIME_TOLERANCE * max(1.0, self.t_end):
            raise ValidationError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def time_at(self, step: int) -> float:
        """Model time of a step; the last step lands exactly on t_end."""
        return self.t_end if step == self.steps else step * self.dt

    def is_snapshot_step(self, step: int) -> bool:
        return step % self.snapshot_cadence == 0 or step == self.steps

    def snapshot_count(self) -> int:
        return sum(1 for s in range(self.steps + 1) if self.is_snapshot_step(s))

    def uses_dealiasing(self, eq: EquationSpec) -> bool:
        if self.dealiasing is not None:
            return self.dealiasing
        return eq.nonlinear and eq.exponent == 5 and get_config().solver.dealias_quintic

    def halved(self) -> "SolverConfig":
        """Half the step, twice the cadence: snapshot times are unchanged."""
        return SolverConfig(self.dt / 2.0, self.t_end, self.snapshot_cadence * 2, self.dealiasing)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dt": self.dt,
            "t_end": self.t_end,
            "snapshot_cadence": self.snapshot_cadence,
            "dealiasing": self.dealiasing,
        }


@dataclass
class TrajectoryHistory:
    """
    Time-stamped snapshots of a solution.

    Attributes:
        equation: The equation solved.
        grid: Grid shared by every snapshot.
        snapshots: (time, field) pairs, strictly increasing in time, starting at 0.
        initial_datum: The datum at t = 0.
        solver: Solver configuration, when known.
        validity_window: Wrap-around validity time, when computed.
    """

    equation: EquationSpec
    grid: GridSpec
    snapshots: List[Tuple[float, ComplexField]] = field(default_factory=list)
    initial_datum: Optional[ComplexField] = None
    solver: Optional[SolverConfig] = None
    validity_window: Optional[float] = None

    @classmethod
    def start(cls, equation: EquationSpec, u0: ComplexField,
              solver: Optional[SolverConfig] = None) -> "TrajectoryHistory":
        datum = u0.with_values(u0.values.copy(), 0.0)
        history = cls(equation, u0.grid, [], datum, solver)
        history.append(0.0, datum)
        return history

    def append(self, t: float, f: ComplexField) -> None:
        """Add a snapshot; times must increase strictly and the grid must match."""
        if f.grid != self.grid:
            raise GridError("Snapshot grid differs from history grid")
        if not self.snapshots and t != 0.0:
            raise ValidationError("First snapshot must be at t = 0")
        if self.snapshots and t <= self.snapshots[-1][0]:
            raise ValidationError(f"Snapshot time {t} does not exceed {self.snapshots[-1][0]}")
        self.snapshots.append((float(t), f.with_values(f.values, float(t))))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots])

    @property
    def t_end(self) -> float:
        return self.snapshots[-1][0]

    def __len__(self) -> int:
        return len(self.snapshots)

    def index_of(self, t: float, tolerance: float = 1e-9) -> int:
        """Index of the snapshot at time t (within tolerance)."""
        times = self.times
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > tolerance * max(1.0, abs(t)):
            raise CoverageError(f"No snapshot at t={t}")
        return i

    def field_at(self, t: float, tolerance: float = 1e-9) -> ComplexField:
        return self.snapshots[self.index_of(t, tolerance)][1]

    def indices_between(self, t0: float, t1: float) -> List[int]:
        """Indices of snapshots whose time lies in [t0, t1]."""
        times = self.times
        eps = 1e-9 * max(1.0, abs(t1))
        return [i for i, t in enumerate(times) if t0 - eps <= t <= t1 + eps]


@dataclass
class SolverState:
    """Resumable state of an evolution: the last completed step and the history so far."""

    step: int
    field: ComplexField
    history: TrajectoryHistory


@dataclass(frozen=True)
class ValidityWindow:
    """
    Wrap-around validity estimate ``t_wrap = (l - c*sigma - |x_c|) / (2K)``.

    Attributes:
        t_wrap: Time up to which whole-space diagnostics are trusted.
        sigma: RMS width of |u0|^2 scaled to the Gaussian sigma convention.
        wavenumber: K, holding all but a tolerance of the spectral mass.
    """

    t_wrap: float
    sigma: float
    wavenumber: float


def linear_propagate(f: ComplexField, t: float) -> ComplexField:
    """
    Apply the free propagator ``e^{itΔ}`` (multiplier ``exp(-i|k|^2 t)``).

    Any real t is allowed; the result carries ``time_stamp + t`` when f is stamped.
    """
    stamp = None if f.time_stamp is None else f.time_stamp + t
    if t == 0:
        return f.with_values(f.values.copy(), stamp)
    spectrum = apply_multiplier(forward_transform(f), lambda lat: np.exp(-1j * lat.k_squared * t))
    out = inverse_transform(spectrum)
    out.time_stamp = stamp
    return out


def nonlinear_phase_step(f: ComplexField, dt: float, eq: EquationSpec) -> ComplexField:
    """
    Exact flow of ``i u_t = |u|^{q-1} u`` over dt: ``u exp(-i|u|^{q-1} dt)``.

    The pointwise modulus is preserved.
    """
    if not eq.nonlinear or dt == 0:
        return f.with_values(f.values.copy())
    modulus = np.abs(f.values)
    return f.with_values(f.values * np.exp(-1j * modulus ** (eq.exponent - 1) * dt))


def strang_step(f: ComplexField, dt: float, eq: EquationSpec, dealias: bool = False) -> ComplexField:
    """
    One Strang step: half free step, full phase step, half free step.

    A negative dt runs the exact inverse step (time reversal).

    Args:
        f: Current field.
        dt: Step size.
        eq: Equation.
        dealias: Apply the two-thirds mask after the phase step.

    Returns:
        ComplexField: Field after one step.
    """
    half = np.exp(-1j * lattice_for(f.grid).k_squared * (dt / 2.0))
    spectrum = forward_transform(f)
    u = inverse_transform(apply_multiplier(spectrum, half))
    u = nonlinear_phase_step(u, dt, eq)
    spectrum = forward_transform(u)
    if dealias and eq.nonlinear:
        spectrum = apply_multiplier(spectrum, dealias_mask(f.grid))
    return inverse_transform(apply_multiplier(spectrum, half))


Observer = Callable[[float, ComplexField], None]


def evolve(u0: ComplexField, eq: EquationSpec, cfg: SolverConfig,
           observers: Iterable[Observer] = (),
           state: Optional[SolverState] = None,
           checkpoint: Optional[Callable[[SolverState], None]] = None) -> TrajectoryHistory:
    """
    Integrate from u0 to cfg.t_end with Strang splitting.

    Observers are called with (time, field) at t = 0 and after every step.
    Passing ``state`` resumes a previous evolution; observers are then only
    called for the remaining steps.

    Args:
        u0: Initial datum.
        eq: Equation.
        cfg: Solver configuration.
        observers: Per-step callbacks.
        state: Resume point (from a checkpoint).
        checkpoint: Called with the state after every step; decides itself
            whether to persist.

    Returns:
        TrajectoryHistory: Snapshots at the configured cadence.

    Raises:
        SimulationError: A step produced non-finite values; carries the step
            index and the last finite field.
    """
    if u0.grid.dimension != eq.dimension:
        raise GridError(f"Datum dimension {u0.grid.dimension} != equation dimension {eq.dimension}")
    observers = list(observers)
    dealias = cfg.uses_dealiasing(eq)

    if state is None:
        history = TrajectoryHistory.start(eq, u0, cfg)
        state = SolverState(0, history.snapshots[0][1], history)
        for observer in observers:
            observer(0.0, state.field)
    history = state.history
    history.solver = cfg

    steps = cfg.steps
    report_every = max(1, steps // 10)
    logger.info(f"Evolving {eq.label} on {u0.grid.shape} grid: {steps} steps of dt={cfg.dt}"
                f" (dealias={dealias}, from step {state.step})")

    u = state.field
    for step in range(state.step + 1, steps + 1):
        try:
            u = strang_step(u, cfg.dt, eq, dealias)
        except ValidationError as exc:
            logger.error(f"Non-finite field at step {step}")
            raise SimulationError(f"Non-finite field at step {step}: {exc}", step, state.field) from exc
        t = cfg.time_at(step)
        u.time_stamp = t
        for observer in observers:
            observer(t, u)
        if cfg.is_snapshot_step(step):
            history.append(t, u)
        state.step = step
        state.field = u
        if checkpoint is not None:
            checkpoint(state)
        if step % report_every == 0:
            logger.info(f"Step {step}/{steps} t={t:.4f}")

    return history


def relative_energy_drift(history: TrajectoryHistory) -> float:
    """Max relative deviation of the energy over the stored snapshots."""
    values = np.array([energy(f, history.equation) for _, f in history.snapshots])
    reference = values[0]
    if reference == 0:
        return 0.0
    return float(np.max(np.abs(values - reference)) / abs(reference))


def _no_observers(attempt: int) -> List[Observer]:
    return []


def evolve_with_retry(u0: ComplexField, eq: EquationSpec, cfg: SolverConfig,
                      observers_factory: Callable[[int], List[Observer]] = _no_observers,
                      threshold: Optional[float] = None,
                      retry: bool = True,
                      start_attempt: int = 0,
                      state: Optional[SolverState] = None,
                      checkpoint: Optional[Callable[[SolverState], None]] = None,
                      on_retry: Optional[Callable[[float, SolverConfig], None]] = None,
                      ) -> Tuple[TrajectoryHistory, SolverConfig]:
    """
    Evolve, and if the energy drift exceeds the threshold halve dt once.

    Attempt 0 runs ``cfg``; attempt 1 runs ``cfg.halved()``. A resumed run
    passes the attempt and configuration stored with its checkpoint.

    Args:
        u0: Initial datum.
        eq: Equation.
        cfg: Solver configuration of ``start_attempt``.
        observers_factory: Builds fresh observers for an attempt index.
        threshold: Relative energy drift allowed (configured default if None).
        retry: Whether a drifting attempt 0 is retried.
        start_attempt: 1 when resuming inside the retry.
        state: Resume point for the first attempt run.
        checkpoint: Passed to ``evolve``.
        on_retry: Called with the drift and the halved configuration.

    Returns:
        Tuple of the history and the configuration that produced it.

    Raises:
        SimulationError: Non-finite field, or drift still above threshold.
    """
    threshold = get_config().solver.energy_drift_threshold if threshold is None else threshold
    attempt = start_attempt
    while True:
        history = evolve(u0, eq, cfg, observers_factory(attempt), state=state, checkpoint=checkpoint)
        state = None
        drift = relative_energy_drift(history) if eq.nonlinear else 0.0
        if drift <= threshold:
            return history, cfg
        if attempt > 0 or not retry:
            break
        cfg = cfg.halved()
        attempt = 1
        logger.warning(f"Energy drift {drift:.3e} > {threshold:.1e}; retrying with dt={cfg.dt}")
        if on_retry is not None:
            on_retry(drift, cfg)
    suffix = " after halving dt" if attempt > 0 else ""
    raise SimulationError(f"Relative energy drift {drift:.3e} exceeds {threshold:.1e}{suffix}", cfg.steps)


def validity_window(u0: ComplexField, width_factor: Optional[float] = None,
                    tail_tolerance: Optional[float] = None) -> ValidityWindow:
    """
    Estimate the time before wrap-around pollutes whole-space diagnostics.

    Group velocity is 2k, so content at |k| <= K leaves a packet of width
    sigma centred at x_c after ``(l - c*sigma - |x_c|)/(2K)``.
    """
    numerics = get_config().numerics
    width_factor = numerics.wrap_width_factor if width_factor is None else width_factor
    tail_tolerance = numerics.spectral_tail_tolerance if tail_tolerance is None else tail_tolerance
    grid = u0.grid

    density = np.abs(u0.values) ** 2
    total = float(density.sum())
    if total == 0:
        return ValidityWindow(math.inf, 0.0, 0.0)

    coords = grid.coordinates()
    centroid = [float((density * x).sum() / total) for x in coords]
    variance = np.mean([float((density * (x - c) ** 2).sum() / total) for x, c in zip(coords, centroid)])
    sigma = math.sqrt(2.0 * variance)

    power = np.abs(forward_transform(u0).values.ravel()) ** 2
    modulus = lattice_for(grid).modulus().ravel()
    order = np.argsort(modulus, kind="stable")
    beyond = power.sum() - np.cumsum(power[order])
    inside = np.flatnonzero(beyond <= tail_tolerance * power.sum())
    wavenumber = float(modulus[order][inside[0]])
    if wavenumber == 0:
        return ValidityWindow(math.inf, sigma, 0.0)

    reach = grid.half_width - width_factor * sigma - max(abs(c) for c in centroid)
    if reach <= 0:
        logger.warning(f"Datum of width {sigma:.3g} does not fit the box of half-width {grid.half_width}")
        return ValidityWindow(0.0, sigma, wavenumber)
    return ValidityWindow(reach / (2.0 * wavenumber), sigma, wavenumber)


def save_history(history: TrajectoryHistory, directory: Union[str, Path],
                 extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Persist a history as a directory: ``manifest.json`` plus one snapshot per time.

    Returns:
        Path: The manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (t, f) in enumerate(history.snapshots):
        name = f"snapshot_{i:05d}.npz"
        save_field(directory / name, f)
        files.append({"time": t, "file": name})
    manifest = {
        "format": "nls-history/1",
        "equation": history.equation.to_dict(),
        "grid": {
            "dimension": history.grid.dimension,
            "half_width": history.grid.half_width,
            "points_per_axis": history.grid.points_per_axis,
        },
        "solver": history.solver.to_dict() if history.solver else None,
        "validity_window": history.validity_window,
        "snapshots": files,
    }
    if extra:
        manifest["extra"] = extra
    return dump_json(directory / "manifest.json", manifest)


def load_history(directory: Union[str, Path]) -> TrajectoryHistory:
    """Load a history written by ``save_history``."""
    directory = Path(directory)
    manifest = load_json(directory / "manifest.json")
    eq = EquationSpec.from_dict(manifest["equation"])
    g = manifest["grid"]
    grid = make_grid(g["dimension"], g["half_width"], g["points_per_axis"])
    solver = SolverConfig(**manifest["solver"]) if manifest.get("solver") else None
    history = TrajectoryHistory(eq, grid, [], None, solver, manifest.get("validity_window"))
    for entry in manifest["snapshots"]:
        history.append(float(entry["time"]), load_field(directory / entry["file"]))
    history.initial_datum = history.snapshots[0][1]
    return history


__all__ = [
    "EquationSpec",
    "SolverConfig",
    "TrajectoryHistory",
    "SolverState",
    "ValidityWindow",
    "linear_propagate",
    "nonlinear_phase_step",
    "strang_step",
    "evolve",
    "evolve_with_retry",
    "relative_energy_drift",
    "validity_window",
    "save_history",
    "load_history",
]
