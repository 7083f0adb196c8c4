"""
Experiment runner.

``run_scenario`` executes a scenario's pipeline into a run directory holding:

* ``config.yaml``: the fully resolved configuration,
* ``manifest.json``: config hash, tool version, status and artifact list,
* ``timestamps.json``: wall-clock start and end (kept apart so every other
  file is byte-identical across reruns),
* ``trace.csv`` / ``summary.json`` and scenario-specific reports,
* ``checkpoint/``: the latest solver checkpoint while a run is unfinished.
"""

import dataclasses
import logging
import math
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from nls_decay_lab import __version__
from nls_decay_lab.config import get_config
from nls_decay_lab.duhamel import (
    DuhamelParams,
    choose_M_bound,
    determine_duhamel_sign,
    duhamel_residual,
    f2_strichartz_weight,
    split_F,
    weighted_piece_report,
)
from nls_decay_lab.exceptions import (
    ConfigError,
    NLSLabError,
    QuadratureError,
    RunInterrupted,
    SimulationError,
    ValidationError,
)
from nls_decay_lab.experiment import (
    DuhamelSection,
    ExperimentConfig,
    parse_config,
    write_config,
)
from nls_decay_lab.grid import GridSpec, lattice_for, make_grid
from nls_decay_lab.lemmas import (
    ELE2_EXPONENTS,
    ELE_EXPONENTS,
    RandomFieldSpec,
    homogeneity_degree,
    run_lemma_suite,
    witness_ratio,
)
from nls_decay_lab.norms import (
    STRICHARTZ_PRESETS,
    DecayObserver,
    DecayTrace,
    fit_power_law,
    lp_norm,
    mass,
    max_relative_deviation,
    plateau_change,
    strichartz_tail,
    sup_norm,
    update_decay_trace,
)
from nls_decay_lab.propagators import (
    SolverConfig,
    SolverState,
    TrajectoryHistory,
    ValidityWindow,
    evolve,
    evolve_with_retry,
    linear_propagate,
    load_history,
    relative_energy_drift,
    save_history,
    strang_step,
    validity_window,
)
from nls_decay_lab.snapshots import load_field, save_field
from nls_decay_lab.transforms import (
    dispersive_limit,
    gaussian_free_evolution,
    pseudo_conformal_field,
    pseudo_conformal_with_error,
)
from nls_decay_lab.utils import atomic_write, calculate_statistics, dump_json, load_json


logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
MANIFEST_FILE = "manifest.json"
TIMESTAMPS_FILE = "timestamps.json"
SUMMARY_FILE = "summary.json"
TRACE_FILE = "trace.csv"
CHECKPOINT_DIR = "checkpoint"
LAST_GOOD_FILE = "last_good.npz"

MASS_TOLERANCE = 1e-10
DISPERSIVE_PLATEAU_TOLERANCE = 0.02
ORACLE_TOLERANCE = 1e-8
LEMMA_REFINEMENT_TOLERANCE = 0.01
CADENCE_REDUCTION = 3.0


# ---------------------------------------------------------------------------
# Manifest and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    """
    Provenance of one run.

    Attributes:
        config_hash: Hash of the resolved configuration.
        tool_version: Package version that produced the run.
        scenario: Scenario name.
        status: "running", "complete", "failed", "interrupted" or, for a
            no-op rerun, "already-complete".
        exit_status: "pass" or "fail" once the pipeline has finished.
        validity_window: t_wrap of the datum, when computed.
        artifacts: Every output file, relative to the run directory.
        failure: Failure point and last checkpoint when the run failed.
        notes: Adjustments made while running (cadence coarsening, dt halving).
        started_at, finished_at: Wall-clock times (stored in timestamps.json).
    """

    config_hash: str
    tool_version: str
    scenario: str
    status: str = "running"
    exit_status: Optional[str] = None
    validity_window: Optional[float] = None
    artifacts: List[str] = field(default_factory=list)
    failure: Optional[Dict[str, Any]] = None
    notes: List[str] = field(default_factory=list)
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    run_dir: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        payload = dataclasses.asdict(self)
        for key in ("started_at", "finished_at", "run_dir"):
            payload.pop(key)
        return payload

    @property
    def passed(self) -> bool:
        return self.status in ("complete", "already-complete") and self.exit_status == "pass"

    def write(self, run_dir: Path) -> None:
        dump_json(run_dir / MANIFEST_FILE, self.to_dict())
        dump_json(run_dir / TIMESTAMPS_FILE, {"started_at": self.started_at, "finished_at": self.finished_at})

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> "RunManifest":
        run_dir = Path(run_dir)
        payload = load_json(run_dir / MANIFEST_FILE)
        stamps = run_dir / TIMESTAMPS_FILE
        if stamps.exists():
            payload.update(load_json(stamps))
        payload["run_dir"] = str(run_dir)
        return cls(**payload)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Checkpointer:
    """
    Solver checkpoint callback.

    Saves the state when ``interval`` seconds of wall time have passed since
    the last save, and always at ``interrupt_after_step`` (after which it
    raises RunInterrupted). The interrupt counts steps across retry attempts.
    Each checkpoint is a complete directory; ``latest.json`` is switched to it
    atomically.
    """

    def __init__(self, directory: Path, interval: Optional[float],
                 interrupt_after_step: Optional[int] = None):
        self.directory = Path(directory)
        self.interval = interval
        self.interrupt_after_step = interrupt_after_step
        self.observer: Optional[DecayObserver] = None
        self.attempt = 0
        self.steps_taken = 0
        self.last_step: Optional[int] = None
        self._restored: Optional[Tuple[DecayTrace, int]] = None
        self._last_save = time.monotonic()

    def bind(self, observer: DecayObserver, attempt: int) -> None:
        """Attach the observer of a solver attempt; a restored trace is handed to it once."""
        self.observer = observer
        self.attempt = attempt
        if self._restored is not None:
            trace, calls = self._restored
            trace.refine = observer.trace.refine
            observer.trace = trace
            observer._calls = calls
            self._restored = None

    def __call__(self, state: SolverState) -> None:
        self.steps_taken += 1
        due = self.interval is not None and time.monotonic() - self._last_save >= self.interval
        interrupt = self.interrupt_after_step is not None and self.steps_taken == self.interrupt_after_step
        if due or interrupt:
            self.save(state)
        if interrupt:
            raise RunInterrupted(f"Run stopped after step {state.step}", state.step)

    def save(self, state: SolverState) -> Path:
        if self.observer is None:
            raise NLSLabError("Checkpointer has no observer bound")
        target = self.directory / f"step-{state.step:09d}"
        if target.exists():
            shutil.rmtree(target)
        save_history(state.history, target / "history")
        save_field(target / "field.npz", state.field)
        self.observer.trace.to_csv(target / TRACE_FILE)
        dump_json(target / "state.json", {
            "step": state.step,
            "attempt": self.attempt,
            "observer_calls": self.observer._calls,
            "solver": state.history.solver.to_dict() if state.history.solver else None,
        })
        dump_json(self.directory / "latest.json", {"step": state.step, "path": target.name})
        for stale in self.directory.glob("step-*"):
            if stale != target:
                shutil.rmtree(stale, ignore_errors=True)
        self.last_step = state.step
        self._last_save = time.monotonic()
        logger.info(f"Checkpoint written at step {state.step} (attempt {self.attempt})")
        return target

    def restore(self) -> Optional[Tuple[SolverState, SolverConfig]]:
        """
        Latest checkpoint as a resumable state, or None when there is none.

        Sets ``attempt``; the stored trace goes to the next bound observer.
        """
        pointer = self.directory / "latest.json"
        if not pointer.exists():
            return None
        source = self.directory / load_json(pointer)["path"]
        meta = load_json(source / "state.json")
        history = load_history(source / "history")
        self._restored = (DecayTrace.from_csv(source / TRACE_FILE), int(meta["observer_calls"]))
        self.attempt = int(meta["attempt"])
        self.last_step = int(meta["step"])
        solver = SolverConfig(**meta["solver"])
        history.solver = solver
        logger.info(f"Resuming from checkpoint at step {meta['step']} (attempt {self.attempt})")
        return SolverState(int(meta["step"]), load_field(source / "field.npz"), history), solver


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

@dataclass
class _Context:
    cfg: ExperimentConfig
    run_dir: Path
    manifest: RunManifest
    resume: bool


def _budgeted_solver(cfg: ExperimentConfig, notes: List[str]) -> SolverConfig:
    """Coarsen the snapshot cadence until the snapshot count fits the budget."""
    budget = cfg.runtime.max_snapshots or get_config().runner.max_snapshots
    solver = cfg.solver_config()
    cadence = solver.snapshot_cadence
    while solver.snapshot_count() > budget and cadence < solver.steps:
        cadence *= 2
        solver = dataclasses.replace(solver, snapshot_cadence=cadence)
    if cadence != cfg.solver.snapshot_cadence:
        message = f"snapshot cadence coarsened from {cfg.solver.snapshot_cadence} to {cadence} (budget {budget})"
        logger.warning(message)
        notes.append(message)
    return solver


def _window_dict(window: ValidityWindow) -> Dict[str, float]:
    return {"t_wrap": window.t_wrap, "sigma": window.sigma, "wavenumber": window.wavenumber}


def _solve(ctx: _Context) -> Tuple[TrajectoryHistory, DecayTrace, ValidityWindow]:
    """
    Evolve the configured datum with checkpointing and the single dt-halving retry.

    The retry records the trace at twice the step interval so that both
    attempts sample the same times.

    Raises:
        SimulationError: Non-finite field, or energy drift above threshold after the retry.
        RunInterrupted: From the testing hook.
    """
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    eq = cfg.equation_spec()
    u0 = cfg.gaussian().sample(grid)
    window = validity_window(u0)
    ctx.manifest.validity_window = window.t_wrap
    solver = _budgeted_solver(cfg, ctx.manifest.notes)
    threshold = get_config().solver.energy_drift_threshold
    interval = cfg.runtime.checkpoint_seconds or get_config().runner.checkpoint_seconds

    checkpointer = Checkpointer(ctx.run_dir / CHECKPOINT_DIR, interval,
                                None if ctx.resume else cfg.runtime.interrupt_after_step)
    state = None
    if ctx.resume:
        restored = checkpointer.restore()
        if restored is not None:
            state, solver = restored

    def observers_for(attempt: int) -> List[DecayObserver]:
        observer = DecayObserver(eq, every=cfg.trace.every * (2 if attempt else 1),
                                 sobolev_index=cfg.trace.sobolev_index, refine=cfg.trace.refine)
        checkpointer.bind(observer, attempt)
        return [observer]

    def note_retry(drift: float, halved: SolverConfig) -> None:
        ctx.manifest.notes.append(f"energy drift {drift:.3e} above {threshold:.1e}; dt halved to {halved.dt}")

    try:
        history, _ = evolve_with_retry(u0, eq, solver, observers_for, threshold,
                                       retry=cfg.solver.retry_on_drift,
                                       start_attempt=checkpointer.attempt, state=state,
                                       checkpoint=checkpointer, on_retry=note_retry)
    except SimulationError as exc:
        if exc.last_good is not None:
            save_field(ctx.run_dir / LAST_GOOD_FILE, exc.last_good)
        ctx.manifest.failure = {
            "step": exc.step,
            "message": str(exc),
            "last_checkpoint": checkpointer.last_step,
            "last_good": LAST_GOOD_FILE if exc.last_good is not None else None,
        }
        raise

    observer = checkpointer.observer
    history.validity_window = window.t_wrap
    if cfg.solver.keep_history:
        save_history(history, ctx.run_dir / "history", {"config_hash": ctx.manifest.config_hash})
    observer.trace.to_csv(ctx.run_dir / TRACE_FILE)
    return history, observer.trace, window


def _fit_block(times: Sequence[float], values: Sequence[float], window: Tuple[float, float],
               target: float, tolerance: float) -> Dict[str, Any]:
    block: Dict[str, Any] = {"window": list(window), "target_slope": target, "tolerance": tolerance}
    try:
        fit = fit_power_law(times, values, window)
    except ValidationError as exc:
        block.update({"error": str(exc), "passed": False})
        return block
    block.update({
        "slope": fit.slope,
        "stderr": fit.stderr,
        "intercept": fit.intercept,
        "samples": fit.samples,
        "passed": abs(fit.slope - target) <= tolerance,
    })
    return block


def _default_decay_window(window: ValidityWindow, t_end: float, start: float = 2.0) -> Tuple[float, float]:
    return start, min(0.8 * window.t_wrap, t_end)


def _strichartz_block(history: TrajectoryHistory) -> Optional[Dict[str, Any]]:
    key = (history.equation.dimension, history.equation.exponent)
    if key not in STRICHARTZ_PRESETS or len(history) < 2:
        return None
    q, r = STRICHARTZ_PRESETS[key]
    starts = [0.0, 0.25 * history.t_end, 0.5 * history.t_end, 0.75 * history.t_end]
    tails = [strichartz_tail(history, s, q, r) for s in starts]
    return {
        "q": q,
        "r": r,
        "starts": starts,
        "tails": tails,
        "monotone": bool(np.all(np.diff(tails) <= 1e-12 * max(1.0, tails[0]))),
    }


def _decay_pipeline(ctx: _Context) -> Dict[str, Any]:
    cfg = ctx.cfg
    history, trace, window = _solve(ctx)
    eq = history.equation
    fit_window = tuple(cfg.fit.window) if cfg.fit.window else _default_decay_window(window, cfg.solver.t_end)
    target = cfg.fit.target_slope if cfg.fit.target_slope is not None else -eq.decay_rate
    fit = _fit_block(trace.times, trace.sup_norms, fit_window, target, cfg.fit.tolerance)
    summary: Dict[str, Any] = {
        "scenario": cfg.scenario,
        "equation": eq.label,
        "validity_window": _window_dict(window),
        "fit": fit,
        "final_A": trace.final_A,
        "M1": max(trace.extras.get("Hs", [0.0])),
        "mass_drift": max_relative_deviation(trace.extras["mass"]),
        "energy_drift": relative_energy_drift(history),
        "strichartz": _strichartz_block(history),
    }
    checks = {
        "slope": fit["passed"],
        "A_monotone": bool(np.all(np.diff(trace.A_running) >= 0)),
        "mass": summary["mass_drift"] <= MASS_TOLERANCE,
        "energy": summary["energy_drift"] <= get_config().solver.energy_drift_threshold,
    }
    if "error" not in fit:
        change = plateau_change(trace, fit_window, cfg.fit.plateau_fraction)
        summary["plateau_change"] = change
        checks["plateau"] = change < cfg.fit.plateau_tolerance
    summary["checks"] = checks
    summary["passed"] = all(checks.values())
    return summary


def linear_dispersive_trace(cfg: ExperimentConfig) -> Tuple[DecayTrace, ValidityWindow]:
    """
    Sample the free evolution of the configured Gaussian at every solver time.

    Extra trace columns: the relative sup error against the closed-form
    evolution and the dispersive ratio.
    """
    grid = cfg.grid_spec()
    g = cfg.gaussian()
    u0 = g.sample(grid)
    window = validity_window(u0)
    solver = cfg.solver_config()
    d = grid.dimension
    l1 = lp_norm(u0, 1)
    trace = DecayTrace(refine=cfg.trace.refine)
    for step in range(1, solver.steps + 1):
        t = solver.time_at(step)
        u = linear_propagate(u0, t)
        oracle = gaussian_free_evolution(g, t, grid)
        sup = sup_norm(u, cfg.trace.refine)
        extras = {
            "mass": mass(u),
            "oracle_error": sup_norm(u - oracle) / sup_norm(oracle),
            "dispersive_ratio": sup * t ** (d / 2.0) / l1,
        }
        update_decay_trace(trace, t, u, d, extras)
    return trace, window


def _dispersive_pipeline(ctx: _Context) -> Dict[str, Any]:
    cfg = ctx.cfg
    trace, window = linear_dispersive_trace(cfg)
    ctx.manifest.validity_window = window.t_wrap
    trace.to_csv(ctx.run_dir / TRACE_FILE)
    return dispersive_summary(cfg, trace, window)


def dispersive_summary(cfg: ExperimentConfig, trace: DecayTrace, window: ValidityWindow) -> Dict[str, Any]:
    d = cfg.grid.dimension
    sigma = cfg.datum.sigma
    # fit only after the dispersive onset t ~ sigma^2
    fit_window = tuple(cfg.fit.window) if cfg.fit.window else _default_decay_window(
        window, cfg.solver.t_end, start=5.0 * sigma ** 2)
    target = cfg.fit.target_slope if cfg.fit.target_slope is not None else -d / 2.0
    fit = _fit_block(trace.times, trace.sup_norms, fit_window, target, cfg.fit.tolerance)

    times = np.asarray(trace.times)
    ratios = np.asarray(trace.extras["dispersive_ratio"])
    errors = np.asarray(trace.extras["oracle_error"])
    inside = (times >= fit_window[0]) & (times <= fit_window[1])
    limit = dispersive_limit(d)
    summary: Dict[str, Any] = {
        "scenario": cfg.scenario,
        "validity_window": _window_dict(window),
        "fit": fit,
        "dispersive_limit": limit,
    }
    checks = {"slope": fit["passed"]}
    if np.any(inside):
        tail = times >= fit_window[1] - 0.2 * (fit_window[1] - fit_window[0])
        plateau = float(np.mean(ratios[inside & tail])) if np.any(inside & tail) else float(ratios[inside][-1])
        summary["dispersive_plateau"] = plateau
        summary["plateau_deviation"] = abs(plateau - limit) / limit
        summary["max_ratio_in_window"] = float(np.max(ratios[inside]))
        oracle_span = times <= fit_window[1]
        summary["max_oracle_error"] = float(np.max(errors[oracle_span])) if np.any(oracle_span) else None
        checks["plateau"] = summary["plateau_deviation"] <= DISPERSIVE_PLATEAU_TOLERANCE
        if summary["max_oracle_error"] is not None:
            checks["oracle"] = summary["max_oracle_error"] <= ORACLE_TOLERANCE
    else:
        checks["plateau"] = False
    summary["mass_drift"] = max_relative_deviation(trace.extras["mass"])
    summary["checks"] = checks
    summary["passed"] = all(checks.values())
    return summary


def _align(value: float, spacing: float) -> float:
    return max(1, int(round(value / spacing))) * spacing


def _thinned(history: TrajectoryHistory) -> TrajectoryHistory:
    """Every other snapshot (the solver record is kept for the dealiasing setting)."""
    thin = TrajectoryHistory(history.equation, history.grid, [], history.initial_datum, history.solver)
    for t, f in history.snapshots[::2]:
        thin.append(t, f)
    return thin


def duhamel_reports(history: TrajectoryHistory, trace: DecayTrace, section: DuhamelSection,
                    workers: int = 1) -> Dict[str, Any]:
    """
    Sign determination, splits and weighted reports at the configured times.

    M and the evaluation times are snapped to snapshot times.
    """
    times = history.times
    spacing = float(np.min(np.diff(times)))
    M = _align(section.M, spacing)
    requested = section.times or [0.5 * history.t_end, history.t_end]
    eval_times = [float(times[int(np.argmin(np.abs(times - t)))]) for t in requested]
    eq = history.equation
    d = eq.dimension

    result: Dict[str, Any] = {"M_requested": section.M, "M": M, "times": eval_times}
    if section.sign is None:
        try:
            sign_info = determine_duhamel_sign(history)
            sign = sign_info.sign
            result["sign_determination"] = {"sign": sign, "residuals": sign_info.residuals, "unique": True}
        except QuadratureError as exc:
            sign = get_config().solver.duhamel_sign
            result["sign_determination"] = {"sign": sign, "error": str(exc), "unique": False}
    else:
        sign = section.sign
        result["sign_determination"] = {"sign": sign, "unique": None}

    delta = None
    key = (d, eq.exponent)
    if key in STRICHARTZ_PRESETS and 0.5 * section.L <= history.t_end:
        q, r = STRICHARTZ_PRESETS[key]
        delta = strichartz_tail(history, 0.5 * section.L, q, r)
    result["delta_measured"] = delta
    params = DuhamelParams(M, section.L, delta or 0.0, sign)
    params.check_onset(section.allow_small_L)

    M1 = max(trace.extras.get("Hs", [0.0])) if trace.extras.get("Hs") else None
    A = trace.final_A or None
    thin = _thinned(history)
    reports = []
    for t in eval_times:
        if t < 2.0 * M:
            reports.append({"t": t, "error": f"t < 2M = {2 * M}"})
            continue
        split = split_F(history, t, params, workers)
        report = weighted_piece_report(split, d, A, M1)
        full = duhamel_residual(history, t, sign, workers)
        report["full_residual"] = full
        report["split_consistent"] = split.residual <= 2.0 * full + 1e-15
        try:
            coarse = duhamel_residual(thin, t, sign, workers)
            report["coarse_residual"] = coarse
            report["cadence_reduction"] = coarse / full if full > 0 else math.inf
        except NLSLabError as exc:
            report["coarse_residual"] = None
            report["cadence_note"] = str(exc)
        if d == 2:
            try:
                report["F2_strichartz"] = f2_strichartz_weight(history, t, M)
            except (QuadratureError, ValidationError) as exc:
                report["F2_strichartz"] = {"error": str(exc)}
        if M1:
            try:
                report["choose_M"] = {"M": choose_M_bound(M1, t, d, eq.exponent)}
            except QuadratureError as exc:
                report["choose_M"] = {"error": str(exc)}
        report["split"] = split
        reports.append(report)
    result["reports"] = reports
    return result


def _duhamel_pipeline(ctx: _Context) -> Dict[str, Any]:
    cfg = ctx.cfg
    history, trace, window = _solve(ctx)
    result = duhamel_reports(history, trace, cfg.duhamel, cfg.runtime.workers)
    tolerance = cfg.duhamel.residual_tolerance
    checks: Dict[str, bool] = {"sign_unique": result["sign_determination"]["unique"] is not False}
    for report in result["reports"]:
        split = report.pop("split", None)
        if "error" in report:
            checks[f"t={report['t']:g}"] = False
            continue
        tag = f"t={report['t']:g}"
        checks[f"residual {tag}"] = report["full_residual"] <= tolerance
        checks[f"split {tag}"] = report["split_consistent"]
        if report.get("coarse_residual") is not None:
            checks[f"cadence {tag}"] = report["cadence_reduction"] >= CADENCE_REDUCTION
        if cfg.duhamel.dump_fields and split is not None:
            for name in ("u_linear", "F1", "F2", "F3"):
                save_field(ctx.run_dir / "fields" / f"t{report['t']:g}_{name}.npz", getattr(split, name))
    dump_json(ctx.run_dir / "split.json", result)
    return {
        "scenario": cfg.scenario,
        "validity_window": _window_dict(window),
        "final_A": trace.final_A,
        "sign": result["sign_determination"]["sign"],
        "M": result["M"],
        "times": result["times"],
        "residuals": [r.get("full_residual") for r in result["reports"]],
        "checks": checks,
        "passed": all(checks.values()),
    }


def _lemma_pipeline(ctx: _Context) -> Dict[str, Any]:
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    section = cfg.lemma
    cutoff = section.spectral_cutoff or 0.5 * lattice_for(grid).max_wavenumber
    spec = RandomFieldSpec(grid, cutoff, section.spectral_decay, cfg.seed)
    summary: Dict[str, Any] = {"scenario": cfg.scenario, "spectral_cutoff": cutoff, "suites": {}}
    checks: Dict[str, bool] = {
        "ele_homogeneity": homogeneity_degree(ELE_EXPONENTS) == 1,
        "ele2_homogeneity": homogeneity_degree(ELE2_EXPONENTS) == 1,
    }
    for which in section.suites:
        report = run_lemma_suite(which, spec, section.n_samples, workers=cfg.runtime.workers)
        dump_json(ctx.run_dir / f"lemma_{which}.json", report.to_dict())
        report.histogram_csv(ctx.run_dir / f"lemma_{which}_histogram.csv")
        entry: Dict[str, Any] = {"max_ratio": report.max_ratio, "offending_seed": report.offending_seed,
                                 "ratio_statistics": calculate_statistics(report.ratios)}
        checks[f"{which} finite"] = math.isfinite(report.max_ratio)
        checks[f"{which} witness"] = witness_ratio(report, spec) == report.max_ratio
        if which == "gradient-embedding":
            checks["gradient embedding constant <= 1"] = report.max_ratio <= 1.0 + 1e-9
        if which == "ele2":
            entry["composition"] = report.composition
        if section.refinement_check:
            fine = run_lemma_suite(which, RandomFieldSpec(grid.refined(2), cutoff, section.spectral_decay, cfg.seed),
                                   section.n_samples, workers=cfg.runtime.workers)
            change = abs(fine.max_ratio - report.max_ratio) / report.max_ratio
            entry["refined_max_ratio"] = fine.max_ratio
            entry["refinement_change"] = change
            checks[f"{which} refinement"] = change < LEMMA_REFINEMENT_TOLERANCE
        summary["suites"][which] = entry
    summary["checks"] = checks
    summary["passed"] = all(checks.values())
    return summary


def pseudo_conformal_records(history: TrajectoryHistory, times: Sequence[float],
                             target: GridSpec, dt: float) -> pd.DataFrame:
    """
    Transform at each time and check mass, sup bookkeeping and the one-step
    evolution residual.

    The residual compares ``u(t + dt)``, mapped from v moved to ``1/(t + dt)``,
    with ``u(t)`` advanced by one step of ``dt``. For the free equation both
    moves use the exact propagator; otherwise each is a single Strang step.
    """
    eq = history.equation
    d = eq.dimension
    rows = []
    for t in sorted(times):
        res = pseudo_conformal_with_error(history, t, target)
        u = res.field
        s_next = 1.0 / (t + dt)
        if eq.nonlinear:
            v_next = strang_step(res.source, s_next - res.source_time, eq)
            advanced = strang_step(u, dt, eq)
        else:
            v_next = linear_propagate(res.source, s_next - res.source_time)
            advanced = linear_propagate(u, dt)
        u_next = pseudo_conformal_field(v_next, t + dt, target)
        rows.append({
            "t": t,
            "source_time": res.source_time,
            "interpolated": res.interpolated,
            "interpolation_error": res.interpolation_error,
            "mass_error": abs(lp_norm(u, 2) - res.source_l2) / res.source_l2,
            "sup_error": abs(sup_norm(u) - t ** (-d / 2.0) * res.source_sup) / sup_norm(u),
            "residual": lp_norm(u_next - advanced, 2) / lp_norm(u, 2),
        })
    return pd.DataFrame(rows)


def _pseudo_conformal_pipeline(ctx: _Context) -> Dict[str, Any]:
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    eq = cfg.equation_spec()
    section = cfg.pseudo_conformal
    v0 = cfg.gaussian().sample(grid)
    history = evolve(v0, eq, cfg.solver_config())
    target = make_grid(grid.dimension,
                       section.target_half_width or grid.half_width * min(section.times),
                       section.target_points or grid.points_per_axis)
    frame = pseudo_conformal_records(history, section.times, target, cfg.solver.dt)
    atomic_write(ctx.run_dir / "pseudo_conformal.csv",
                 lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))
    checks = {"mass": bool((frame["mass_error"] <= section.mass_tolerance).all())}
    residuals = frame["residual"].dropna()
    if not eq.nonlinear and len(residuals):
        checks["free residual"] = bool((residuals <= section.residual_tolerance).all())
    return {
        "scenario": cfg.scenario,
        "equation": eq.label,
        "max_mass_error": float(frame["mass_error"].max()),
        "max_sup_error": float(frame["sup_error"].max()),
        "max_residual": float(residuals.max()) if len(residuals) else None,
        "checks": checks,
        "passed": all(checks.values()),
    }


PIPELINES: Dict[str, Callable[[_Context], Dict[str, Any]]] = {
    "decay-3d-quintic": _decay_pipeline,
    "decay-3d-cubic": _decay_pipeline,
    "decay-2d-quintic": _decay_pipeline,
    "linear-dispersive": _dispersive_pipeline,
    "duhamel-split": _duhamel_pipeline,
    "lemma-suite": _lemma_pipeline,
    "pseudo-conformal": _pseudo_conformal_pipeline,
}


def _list_artifacts(run_dir: Path) -> List[str]:
    skip = {MANIFEST_FILE, TIMESTAMPS_FILE}
    return sorted(
        p.relative_to(run_dir).as_posix()
        for p in run_dir.rglob("*")
        if p.is_file() and p.name not in skip and CHECKPOINT_DIR not in p.relative_to(run_dir).parts[:1]
    )


def run_scenario(cfg: ExperimentConfig, resume: Optional[bool] = None) -> RunManifest:
    """
    Execute a scenario into its run directory.

    Args:
        cfg: Validated configuration.
        resume: Continue from the latest checkpoint. None resumes when a
            checkpoint exists.

    Returns:
        RunManifest: Final manifest. A rerun of a completed configuration is a
        no-op returning status "already-complete".

    Raises:
        ConfigError: The run directory holds a run of a different configuration.
    """
    run_dir = cfg.run_directory()
    digest = cfg.hash()
    if (run_dir / MANIFEST_FILE).exists():
        existing = RunManifest.load(run_dir)
        if existing.config_hash != digest:
            raise ConfigError([f"{run_dir} holds a run with config hash {existing.config_hash[:12]},"
                               f" not {digest[:12]}"])
        if existing.status == "complete":
            logger.info(f"{run_dir}: already complete")
            return dataclasses.replace(existing, status="already-complete")
    if resume is None:
        resume = (run_dir / CHECKPOINT_DIR / "latest.json").exists()

    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, run_dir / CONFIG_FILE)
    manifest = RunManifest(digest, __version__, cfg.scenario, started_at=_now(), run_dir=str(run_dir))
    manifest.write(run_dir)
    ctx = _Context(cfg, run_dir, manifest, resume)
    logger.info(f"Running {cfg.scenario} into {run_dir} (resume={resume})")

    try:
        summary = PIPELINES[cfg.scenario](ctx)
    except RunInterrupted as exc:
        manifest.status = "interrupted"
        manifest.failure = {"step": exc.step, "message": str(exc), "last_checkpoint": exc.step}
        logger.warning(f"{run_dir}: interrupted after step {exc.step}")
    except SimulationError as exc:
        manifest.status = "failed"
        manifest.exit_status = "fail"
        if manifest.failure is None:
            manifest.failure = {"step": exc.step, "message": str(exc)}
        logger.error(f"{run_dir}: {exc}")
    else:
        summary["notes"] = manifest.notes
        dump_json(run_dir / SUMMARY_FILE, summary)
        shutil.rmtree(run_dir / CHECKPOINT_DIR, ignore_errors=True)
        manifest.status = "complete"
        manifest.exit_status = "pass" if summary.get("passed") else "fail"
        logger.info(f"{run_dir}: complete ({manifest.exit_status})")

    manifest.finished_at = _now()
    manifest.artifacts = _list_artifacts(run_dir)
    manifest.write(run_dir)
    return manifest


def _resolve_run_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.parent if path.name == MANIFEST_FILE else path


def resume_run(path: Union[str, Path]) -> RunManifest:
    """Resume the run whose directory (or manifest.json) is given."""
    run_dir = _resolve_run_dir(path)
    if not (run_dir / CONFIG_FILE).exists():
        raise ConfigError([f"{run_dir}: no {CONFIG_FILE} to resume from"])
    cfg = parse_config(run_dir / CONFIG_FILE)
    cfg.output_dir = str(run_dir)
    cfg.runtime.interrupt_after_step = None
    return run_scenario(cfg, resume=True)


def _run_path(path: str) -> Dict[str, Any]:
    manifest = run_scenario(parse_config(path))
    payload = manifest.to_dict()
    payload["run_dir"] = manifest.run_dir
    return payload


def run_campaign(paths: Sequence[Union[str, Path]], workers: int = 1) -> List[Dict[str, Any]]:
    """Run several experiment files, up to ``workers`` at a time in separate processes."""
    paths = [str(p) for p in paths]
    if workers <= 1 or len(paths) <= 1:
        return [_run_path(p) for p in paths]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_path, paths))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _scenario_fit_settings(csv_path: Path) -> Tuple[Optional[float], Optional[float]]:
    config_path = csv_path.parent / CONFIG_FILE
    if not config_path.exists():
        return None, None
    cfg = parse_config(config_path)
    target = cfg.fit.target_slope
    if target is None:
        target = -cfg.grid.dimension / 2.0
    return target, cfg.fit.tolerance


def fit_and_report(csv_path: Union[str, Path], window: Tuple[float, float],
                   target_slope: Optional[float] = None,
                   tolerance: Optional[float] = None,
                   plateau_fraction: float = 0.2) -> Dict[str, Any]:
    """
    Fit a stored trace.

    The target and tolerance default to those of the run the CSV belongs to
    (its sibling config.yaml), when there is one.

    Raises:
        ValidationError: Malformed CSV, too few samples or nonpositive norms in the window.
    """
    csv_path = Path(csv_path)
    trace = DecayTrace.from_csv(csv_path)
    fit = fit_power_law(trace.times, trace.sup_norms, window)
    default_target, default_tolerance = _scenario_fit_settings(csv_path)
    target = target_slope if target_slope is not None else default_target
    tolerance = tolerance if tolerance is not None else default_tolerance
    report: Dict[str, Any] = {
        "csv": str(csv_path),
        "window": [float(window[0]), float(window[1])],
        "slope": fit.slope,
        "stderr": fit.stderr,
        "samples": fit.samples,
        "final_A": trace.final_A,
        "plateau_change": plateau_change(trace, window, plateau_fraction),
        "target_slope": target,
        "tolerance": tolerance,
    }
    if target is not None and tolerance is not None:
        report["passed"] = abs(fit.slope - target) <= tolerance
    return report


def report_directory(directory: Union[str, Path]) -> pd.DataFrame:
    """
    Aggregate every ``summary.json`` under a directory into ``report.csv``.

    Returns:
        pd.DataFrame: One row per run, nested keys flattened with dots.
    """
    directory = Path(directory)
    rows = []
    for path in sorted(directory.rglob(SUMMARY_FILE)):
        payload = load_json(path)
        payload.pop("notes", None)
        row = pd.json_normalize(payload, sep=".").iloc[0].to_dict()
        row["run_dir"] = path.parent.relative_to(directory).as_posix()
        if (path.parent / MANIFEST_FILE).exists():
            manifest = load_json(path.parent / MANIFEST_FILE)
            row["status"] = manifest.get("status")
            row["exit_status"] = manifest.get("exit_status")
        rows.append(row)
    if not rows:
        raise ValidationError(f"No {SUMMARY_FILE} found under {directory}")
    frame = pd.DataFrame(rows)
    frame = frame[["run_dir"] + [c for c in frame.columns if c != "run_dir"]]
    atomic_write(directory / "report.csv", lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))
    return frame


__all__ = [
    "RunManifest",
    "Checkpointer",
    "run_scenario",
    "resume_run",
    "run_campaign",
    "fit_and_report",
    "report_directory",
    "linear_dispersive_trace",
    "dispersive_summary",
    "duhamel_reports",
    "pseudo_conformal_records",
]
