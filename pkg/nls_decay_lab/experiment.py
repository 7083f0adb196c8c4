"""
Experiment files.

An experiment is a YAML document naming a scenario plus overrides of that
scenario's defaults, for example::

    schema_version: 1
    scenario: decay-2d-quintic
    grid: {half_width: 32pi, points_per_axis: 256}
    solver: {dt: 1.0e-3, t_end: 12.0}

``parse_config`` validates the document (collecting every violation into one
ConfigError), merges the scenario defaults and returns an ExperimentConfig.
Lengths may be written as multiples of pi.
"""

import copy
import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import ConfigError, ValidationError
from nls_decay_lab.grid import GridSpec, lattice_for, make_grid
from nls_decay_lab.lemmas import SUITES
from nls_decay_lab.propagators import EquationSpec, SolverConfig
from nls_decay_lab.transforms import GaussianDatum
from nls_decay_lab.utils import atomic_write, config_hash, merge_dictionaries
from nls_decay_lab.validator import (
    DictValidator,
    ListValidator,
    NumericValidator,
    PowerOfTwoValidator,
    StringValidator,
    Validator,
)


SCHEMA_VERSION = 1
SCENARIOS = (
    "decay-3d-quintic",
    "decay-3d-cubic",
    "decay-2d-quintic",
    "linear-dispersive",
    "duhamel-split",
    "lemma-suite",
    "pseudo-conformal",
)
DECAY_MODELS = {"decay-3d-quintic": (3, 5), "decay-3d-cubic": (3, 3), "decay-2d-quintic": (2, 5)}
REQUIRED_FIELDS = ("schema_version", "scenario")


@dataclass
class GridSection:
    dimension: int = 2
    half_width: float = 32.0 * math.pi
    points_per_axis: int = 256


@dataclass
class EquationSection:
    exponent: int = 5
    nonlinear: bool = True


@dataclass
class DatumSection:
    """Gaussian datum ``amplitude * exp(-|x-center|^2 / (2 sigma^2))``."""

    sigma: float = math.pi
    amplitude: float = 0.1
    center: Optional[List[float]] = None


@dataclass
class SolverSection:
    dt: float = field(default_factory=lambda: get_config().solver.dt)
    t_end: float = 12.0
    snapshot_cadence: int = 50
    dealiasing: Optional[bool] = None
    retry_on_drift: bool = True
    keep_history: bool = False


@dataclass
class TraceSection:
    every: int = 10
    sobolev_index: float = 3.0
    refine: bool = False


@dataclass
class FitSection:
    """Decay fit; ``window`` None means the scenario default (see DESIGN.md)."""

    window: Optional[List[float]] = None
    target_slope: Optional[float] = None
    tolerance: float = 0.15
    plateau_fraction: float = 0.2
    plateau_tolerance: float = 0.05


@dataclass
class DuhamelSection:
    M: float = 0.05
    L: float = 6.0
    times: Optional[List[float]] = None
    sign: Optional[int] = None
    allow_small_L: bool = False
    residual_tolerance: float = 1e-3
    dump_fields: bool = False


@dataclass
class LemmaSection:
    suites: List[str] = field(default_factory=lambda: list(SUITES))
    n_samples: int = 1000
    spectral_cutoff: Optional[float] = None
    spectral_decay: float = 3.0
    refinement_check: bool = True


@dataclass
class PseudoConformalSection:
    times: List[float] = field(default_factory=lambda: [1.0, 1.25, 2.0])
    target_half_width: Optional[float] = None
    target_points: Optional[int] = None
    mass_tolerance: float = 1e-8
    residual_tolerance: float = 1e-4


@dataclass
class RuntimeSection:
    """
    Execution settings; excluded from the config hash.

    ``interrupt_after_step`` is a testing hook: the run checkpoints and stops
    after that many solver steps, counted across the dt-halving retry.
    """

    checkpoint_seconds: Optional[float] = None
    max_snapshots: Optional[int] = None
    workers: int = 1
    interrupt_after_step: Optional[int] = None


SECTIONS: Dict[str, type] = {
    "grid": GridSection,
    "equation": EquationSection,
    "datum": DatumSection,
    "solver": SolverSection,
    "trace": TraceSection,
    "fit": FitSection,
    "duhamel": DuhamelSection,
    "lemma": LemmaSection,
    "pseudo_conformal": PseudoConformalSection,
    "runtime": RuntimeSection,
}

SCENARIO_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "decay-2d-quintic": {
        "fit": {"target_slope": -1.0, "tolerance": 0.15},
    },
    "decay-3d-quintic": {
        "grid": {"dimension": 3, "half_width": 16.0 * math.pi, "points_per_axis": 64},
        "datum": {"sigma": 2.0 * math.pi, "amplitude": 0.05},
        "solver": {"t_end": 8.0, "snapshot_cadence": 100},
        "fit": {"target_slope": -1.5, "tolerance": 0.3},
    },
    "decay-3d-cubic": {
        "grid": {"dimension": 3, "half_width": 16.0 * math.pi, "points_per_axis": 64},
        "equation": {"exponent": 3},
        "datum": {"sigma": 2.0 * math.pi, "amplitude": 0.05},
        "solver": {"t_end": 8.0, "snapshot_cadence": 100},
        "fit": {"target_slope": -1.5, "tolerance": 0.3},
    },
    "linear-dispersive": {
        "grid": {"points_per_axis": 1024},
        "equation": {"nonlinear": False},
        "datum": {"sigma": 1.0, "amplitude": 1.0},
        "solver": {"dt": 0.05, "t_end": 10.0, "snapshot_cadence": 1},
        "fit": {"tolerance": 0.02},
    },
    "duhamel-split": {},
    "lemma-suite": {
        "grid": {"dimension": 3, "half_width": 16.0, "points_per_axis": 32},
    },
    "pseudo-conformal": {
        "grid": {"dimension": 1, "half_width": 32.0, "points_per_axis": 256},
        "equation": {"exponent": 5, "nonlinear": False},
        "datum": {"sigma": 1.0, "amplitude": 1.0},
        "solver": {"dt": 0.05, "t_end": 1.0, "snapshot_cadence": 1},
    },
}

_PI_LENGTH = re.compile(r"^\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi\s*$")


def _bool_validator(allow_none: bool = False) -> Validator:
    return _TypeValidator(bool, allow_none)


class _TypeValidator(Validator):
    """Accepts instances of one type (and None when allowed)."""

    def __init__(self, kind: type, allow_none: bool = False):
        self.kind = kind
        self.allow_none = allow_none
        self._error_message = ""

    def validate(self, data: Any) -> bool:
        if data is None and self.allow_none:
            return True
        if not isinstance(data, self.kind):
            self._error_message = f"Value must be {self.kind.__name__}, got {type(data).__name__}"
            return False
        self._error_message = ""
        return True

    def get_error_message(self) -> str:
        return self._error_message


class _OptionalList(ListValidator):
    def validate(self, data: Any) -> bool:
        return data is None or super().validate(data)


def _schema() -> DictValidator:
    positive = NumericValidator(min_value=0.0, exclusive_min=True)
    optional_positive = NumericValidator(min_value=0.0, exclusive_min=True, allow_none=True)
    count = NumericValidator(min_value=1, integer=True)
    sections = {
        "grid": DictValidator(validators={
            "dimension": NumericValidator(min_value=1, max_value=3, integer=True),
            "half_width": positive,
            "points_per_axis": PowerOfTwoValidator(minimum=8),
        }, allow_unknown=False),
        "equation": DictValidator(validators={
            "exponent": NumericValidator(min_value=3, max_value=5, integer=True),
            "nonlinear": _bool_validator(),
        }, allow_unknown=False),
        "datum": DictValidator(validators={
            "sigma": positive,
            "amplitude": NumericValidator(),
            "center": _OptionalList(NumericValidator()),
        }, allow_unknown=False),
        "solver": DictValidator(validators={
            "dt": positive,
            "t_end": positive,
            "snapshot_cadence": count,
            "dealiasing": _bool_validator(allow_none=True),
            "retry_on_drift": _bool_validator(),
            "keep_history": _bool_validator(),
        }, allow_unknown=False),
        "trace": DictValidator(validators={
            "every": count,
            "sobolev_index": NumericValidator(min_value=0.0),
            "refine": _bool_validator(),
        }, allow_unknown=False),
        "fit": DictValidator(validators={
            "window": _OptionalList(NumericValidator(min_value=0.0, exclusive_min=True), 2, 2),
            "target_slope": NumericValidator(allow_none=True),
            "tolerance": positive,
            "plateau_fraction": NumericValidator(min_value=0.0, max_value=1.0, exclusive_min=True),
            "plateau_tolerance": positive,
        }, allow_unknown=False),
        "duhamel": DictValidator(validators={
            "M": positive,
            "L": positive,
            "times": _OptionalList(NumericValidator(min_value=0.0, exclusive_min=True), 1),
            "sign": NumericValidator(min_value=-1, max_value=1, integer=True, allow_none=True),
            "allow_small_L": _bool_validator(),
            "residual_tolerance": positive,
            "dump_fields": _bool_validator(),
        }, allow_unknown=False),
        "lemma": DictValidator(validators={
            "suites": ListValidator(StringValidator(allowed_values=list(SUITES)), 1),
            "n_samples": count,
            "spectral_cutoff": optional_positive,
            "spectral_decay": NumericValidator(min_value=0.0),
            "refinement_check": _bool_validator(),
        }, allow_unknown=False),
        "pseudo_conformal": DictValidator(validators={
            "times": ListValidator(NumericValidator(min_value=0.0, exclusive_min=True), 1),
            "target_half_width": optional_positive,
            "target_points": _OptionalPowerOfTwo(),
            "mass_tolerance": positive,
            "residual_tolerance": positive,
        }, allow_unknown=False),
        "runtime": DictValidator(validators={
            "checkpoint_seconds": optional_positive,
            "max_snapshots": NumericValidator(min_value=2, integer=True, allow_none=True),
            "workers": count,
            "interrupt_after_step": NumericValidator(min_value=1, integer=True, allow_none=True),
        }, allow_unknown=False),
    }
    top = {
        "schema_version": NumericValidator(min_value=1, max_value=SCHEMA_VERSION, integer=True),
        "scenario": StringValidator(allowed_values=list(SCENARIOS)),
        "name": StringValidator(min_length=1, allow_none=True),
        "seed": NumericValidator(min_value=0, integer=True),
        "output_dir": StringValidator(min_length=1, allow_none=True),
    }
    top.update(sections)
    return DictValidator(required_keys=list(REQUIRED_FIELDS), validators=top, allow_unknown=False)


class _OptionalPowerOfTwo(PowerOfTwoValidator):
    def validate(self, data: Any) -> bool:
        return data is None or super().validate(data)


def _normalise_lengths(payload: Dict[str, Any], errors: List[str]) -> None:
    """Accept lengths written as multiples of pi (``"32pi"``, ``"2*pi"``)."""
    for section, key in (("grid", "half_width"), ("datum", "sigma"), ("pseudo_conformal", "target_half_width")):
        value = payload.get(section, {}).get(key) if isinstance(payload.get(section), dict) else None
        if not isinstance(value, str):
            continue
        match = _PI_LENGTH.match(value)
        if match is None:
            errors.append(f"{section}.{key}: cannot read '{value}' as a length")
            continue
        factor = float(match.group(1)) if match.group(1) else 1.0
        payload[section][key] = factor * math.pi


@dataclass
class ExperimentConfig:
    """
    A resolved experiment: scenario defaults merged with the file's overrides.

    Attributes:
        scenario: Pipeline to run.
        name: Optional run name (used in the default output directory).
        seed: Seed for random fields.
        output_dir: Run directory; defaults under the configured output root.
        schema_version: Version of the file format.
    """

    scenario: str
    name: Optional[str] = None
    seed: int = 0
    output_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION
    grid: GridSection = field(default_factory=GridSection)
    equation: EquationSection = field(default_factory=EquationSection)
    datum: DatumSection = field(default_factory=DatumSection)
    solver: SolverSection = field(default_factory=SolverSection)
    trace: TraceSection = field(default_factory=TraceSection)
    fit: FitSection = field(default_factory=FitSection)
    duhamel: DuhamelSection = field(default_factory=DuhamelSection)
    lemma: LemmaSection = field(default_factory=LemmaSection)
    pseudo_conformal: PseudoConformalSection = field(default_factory=PseudoConformalSection)
    runtime: RuntimeSection = field(default_factory=RuntimeSection)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of everything that determines results (not output_dir or runtime)."""
        payload = self.to_dict()
        payload.pop("output_dir")
        payload.pop("runtime")
        return config_hash(payload)

    def grid_spec(self) -> GridSpec:
        return make_grid(self.grid.dimension, self.grid.half_width, self.grid.points_per_axis)

    def equation_spec(self) -> EquationSpec:
        return EquationSpec(self.grid.dimension, self.equation.exponent, self.equation.nonlinear)

    def gaussian(self) -> GaussianDatum:
        centre = tuple(self.datum.center) if self.datum.center is not None else None
        return GaussianDatum(self.datum.sigma, self.datum.amplitude, centre)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(s.dt, s.t_end, s.snapshot_cadence, s.dealiasing)

    def run_directory(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(get_config().runner.output_root) / f"{self.name or self.scenario}-{self.hash()[:12]}"


def _build(payload: Dict[str, Any]) -> ExperimentConfig:
    sections = {name: cls(**payload.get(name, {})) for name, cls in SECTIONS.items()}
    return ExperimentConfig(
        scenario=payload["scenario"],
        name=payload.get("name"),
        seed=int(payload.get("seed", 0)),
        output_dir=payload.get("output_dir"),
        schema_version=int(payload["schema_version"]),
        **sections,
    )


def _coerce(cfg: ExperimentConfig) -> None:
    cfg.grid.dimension = int(cfg.grid.dimension)
    cfg.grid.points_per_axis = int(cfg.grid.points_per_axis)
    cfg.grid.half_width = float(cfg.grid.half_width)
    cfg.equation.exponent = int(cfg.equation.exponent)
    cfg.datum.sigma = float(cfg.datum.sigma)
    cfg.datum.amplitude = float(cfg.datum.amplitude)
    if cfg.datum.center is not None:
        cfg.datum.center = [float(c) for c in cfg.datum.center]
    cfg.solver.dt = float(cfg.solver.dt)
    cfg.solver.t_end = float(cfg.solver.t_end)
    cfg.solver.snapshot_cadence = int(cfg.solver.snapshot_cadence)
    cfg.trace.every = int(cfg.trace.every)
    cfg.trace.sobolev_index = float(cfg.trace.sobolev_index)
    if cfg.fit.window is not None:
        cfg.fit.window = [float(v) for v in cfg.fit.window]
    if cfg.fit.target_slope is not None:
        cfg.fit.target_slope = float(cfg.fit.target_slope)
    cfg.duhamel.M = float(cfg.duhamel.M)
    cfg.duhamel.L = float(cfg.duhamel.L)
    if cfg.duhamel.times is not None:
        cfg.duhamel.times = [float(v) for v in cfg.duhamel.times]
    if cfg.duhamel.sign is not None:
        cfg.duhamel.sign = int(cfg.duhamel.sign)
    cfg.lemma.n_samples = int(cfg.lemma.n_samples)
    cfg.lemma.spectral_decay = float(cfg.lemma.spectral_decay)
    cfg.pseudo_conformal.times = [float(v) for v in cfg.pseudo_conformal.times]
    cfg.runtime.workers = int(cfg.runtime.workers)


def _semantic_errors(cfg: ExperimentConfig) -> List[str]:
    """Constraints that involve several fields or the scenario."""
    errors: List[str] = []
    grid: Optional[GridSpec] = None
    try:
        grid = cfg.grid_spec()
    except ValidationError as exc:
        errors.append(f"grid: {exc}")
    try:
        eq = cfg.equation_spec()
    except ValidationError as exc:
        errors.append(f"equation: {exc}")
        eq = None
    try:
        cfg.solver_config()
    except ValidationError as exc:
        errors.append(f"solver: {exc}")

    if cfg.datum.center is not None and len(cfg.datum.center) != cfg.grid.dimension:
        errors.append(f"datum.center: expected {cfg.grid.dimension} coordinates")
    if cfg.fit.window is not None and not cfg.fit.window[0] < cfg.fit.window[1]:
        errors.append(f"fit.window: lower end {cfg.fit.window[0]} is not below {cfg.fit.window[1]}")
    if cfg.duhamel.sign == 0:
        errors.append("duhamel.sign: must be +1 or -1")

    scenario = cfg.scenario
    if scenario in DECAY_MODELS:
        d, q = DECAY_MODELS[scenario]
        if (cfg.grid.dimension, cfg.equation.exponent) != (d, q) or not cfg.equation.nonlinear:
            errors.append(f"scenario {scenario}: needs dimension {d}, exponent {q} and the nonlinearity on")
    elif scenario == "linear-dispersive":
        if cfg.equation.nonlinear:
            errors.append("scenario linear-dispersive: equation.nonlinear must be false")
    elif scenario == "duhamel-split":
        if cfg.duhamel.L < 100.0 * cfg.duhamel.M and not cfg.duhamel.allow_small_L:
            errors.append(
                f"duhamel.L: {cfg.duhamel.L} is below 100 M = {100.0 * cfg.duhamel.M}"
                " (set duhamel.allow_small_L to override)"
            )
        for t in cfg.duhamel.times or []:
            if t > cfg.solver.t_end or t < 2.0 * cfg.duhamel.M:
                errors.append(f"duhamel.times: {t} outside [2M, t_end] = [{2 * cfg.duhamel.M}, {cfg.solver.t_end}]")
    elif scenario == "lemma-suite":
        if cfg.grid.dimension != 3:
            errors.append("scenario lemma-suite: grid.dimension must be 3")
        if grid is not None and cfg.lemma.spectral_cutoff is not None:
            if cfg.lemma.spectral_cutoff > lattice_for(grid).max_wavenumber:
                errors.append(f"lemma.spectral_cutoff: {cfg.lemma.spectral_cutoff} exceeds the grid's"
                              f" largest wavenumber {lattice_for(grid).max_wavenumber}")
    elif scenario == "pseudo-conformal":
        if eq is not None and not eq.is_mass_critical:
            errors.append(f"scenario pseudo-conformal: {eq.label} is not mass-critical")
        times = cfg.pseudo_conformal.times
        for t in times:
            if t > 0 and 1.0 / t > cfg.solver.t_end * (1.0 + 1e-12):
                errors.append(f"pseudo_conformal.times: 1/{t} lies beyond solver.t_end = {cfg.solver.t_end}")
        if times and min(times) > 0:
            target = cfg.pseudo_conformal.target_half_width
            if target is not None and target / min(times) > cfg.grid.half_width * (1.0 + 1e-12):
                errors.append("pseudo_conformal.target_half_width: x/t leaves the source box")
    return errors


def parse_config_dict(payload: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a configuration mapping and fill scenario defaults.

    Raises:
        ConfigError: Listing every violation found.
    """
    if not isinstance(payload, dict):
        raise ConfigError([f"Configuration must be a mapping, got {type(payload).__name__}"])
    payload = copy.deepcopy(payload)
    errors: List[str] = []
    _normalise_lengths(payload, errors)
    schema = _schema()
    if not schema.validate(payload):
        errors.extend(schema.get_errors())
    if errors:
        raise ConfigError(errors)

    merged = merge_dictionaries(SCENARIO_DEFAULTS[payload["scenario"]], payload)
    cfg = _build(merged)
    _coerce(cfg)
    errors = _semantic_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a YAML experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such configuration file"])
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML: {exc}"]) from exc
    return parse_config_dict(payload)


def serialize_config(cfg: ExperimentConfig) -> str:
    """YAML text that ``parse_config`` reads back to an equal configuration."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)


def write_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    text = serialize_config(cfg)

    def _write(tmp: str) -> None:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)

    return atomic_write(path, _write)


__all__ = [
    "SCHEMA_VERSION",
    "SCENARIOS",
    "SCENARIO_DEFAULTS",
    "GridSection",
    "EquationSection",
    "DatumSection",
    "SolverSection",
    "TraceSection",
    "FitSection",
    "DuhamelSection",
    "LemmaSection",
    "PseudoConformalSection",
    "RuntimeSection",
    "ExperimentConfig",
    "parse_config",
    "parse_config_dict",
    "serialize_config",
    "write_config",
]
