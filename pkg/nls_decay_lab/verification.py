"""
Built-in acceptance suites.

Each suite returns a list of check records
``{"name", "value", "threshold", "passed"}``; ``verify`` runs one suite (or
all of them) and reports the conjunction. The suites run on small fixed grids
so they finish in minutes.
"""

import logging
import math
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy.integrate import trapezoid

from nls_decay_lab.config import get_config
from nls_decay_lab.duhamel import DuhamelParams, duhamel_kernel_integral, split_F
from nls_decay_lab.exceptions import SimulationError, ValidationError
from nls_decay_lab.experiment import SCHEMA_VERSION, DuhamelSection, parse_config_dict
from nls_decay_lab.grid import lattice_for, make_grid
from nls_decay_lab.lemmas import (
    ELE2_EXPONENTS,
    ELE_EXPONENTS,
    RandomFieldSpec,
    homogeneity_degree,
    lemma_ele2_ratio,
    lemma_ele_ratio,
    random_band_limited,
    run_lemma_suite,
)
from nls_decay_lab.norms import (
    STRICHARTZ_PRESETS,
    DecayTrace,
    StrichartzMeter,
    lp_norm,
    mass,
    max_relative_deviation,
    strichartz_tail,
    sup_norm,
    update_decay_trace,
)
from nls_decay_lab.propagators import (
    EquationSpec,
    SolverConfig,
    TrajectoryHistory,
    evolve,
    evolve_with_retry,
    linear_propagate,
    relative_energy_drift,
    strang_step,
    validity_window,
)
from nls_decay_lab.runner import (
    CADENCE_REDUCTION,
    DISPERSIVE_PLATEAU_TOLERANCE,
    LEMMA_REFINEMENT_TOLERANCE,
    MASS_TOLERANCE,
    ORACLE_TOLERANCE,
    dispersive_summary,
    duhamel_reports,
    linear_dispersive_trace,
    pseudo_conformal_records,
)
from nls_decay_lab.transforms import GaussianDatum, dispersive_ratio, gaussian_free_evolution


logger = logging.getLogger(__name__)


def _check(name: str, value: Any, threshold: Any, passed: bool) -> Dict[str, Any]:
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _verify_oracle() -> List[Dict[str, Any]]:
    grid = make_grid(2, 32.0 * math.pi, 256)
    g = GaussianDatum(math.pi, 1.0)
    u0 = g.sample(grid)
    window = validity_window(u0)
    checks = []
    for t in np.linspace(0.5, 0.8 * window.t_wrap, 10):
        exact = gaussian_free_evolution(g, float(t), grid)
        error = sup_norm(linear_propagate(u0, float(t)) - exact) / sup_norm(exact)
        checks.append(_check(f"oracle t={t:.3f}", error, ORACLE_TOLERANCE, error <= ORACLE_TOLERANCE))
    return checks


def _verify_dispersive() -> List[Dict[str, Any]]:
    cfg = parse_config_dict({"schema_version": SCHEMA_VERSION, "scenario": "linear-dispersive"})
    trace, window = linear_dispersive_trace(cfg)
    summary = dispersive_summary(cfg, trace, window)
    checks = [_check(f"2d {name}", None, None, ok) for name, ok in summary["checks"].items()]
    checks.append(_check("2d slope value", summary["fit"].get("slope"), -1.0, summary["fit"]["passed"]))

    # 3d: finite-time ratio against the closed form
    grid = make_grid(3, 16.0 * math.pi, 64)
    g = GaussianDatum(2.0 * math.pi, 1.0)
    u0 = g.sample(grid)
    window = validity_window(u0)
    for t in np.linspace(0.2, 0.8, 4) * window.t_wrap:
        numeric = dispersive_ratio(u0, float(t))
        exact = g.sup_at(float(t), 3) * float(t) ** 1.5 / g.l1_norm(3)
        deviation = abs(numeric - exact) / exact
        checks.append(_check(f"3d ratio t={t:.3f}", deviation, DISPERSIVE_PLATEAU_TOLERANCE,
                             deviation <= DISPERSIVE_PLATEAU_TOLERANCE))
    return checks


def _verify_conservation() -> List[Dict[str, Any]]:
    checks = []
    threshold = get_config().solver.energy_drift_threshold
    cases = [
        (EquationSpec(2, 5), make_grid(2, 32.0, 64), GaussianDatum(4.0, 0.3)),
        (EquationSpec(3, 3), make_grid(3, 32.0, 32), GaussianDatum(4.0, 0.3)),
    ]
    for eq, grid, g in cases:
        u0 = g.sample(grid)
        try:
            history, used = evolve_with_retry(u0, eq, SolverConfig(1e-3, 0.5, 50))
        except SimulationError as exc:
            checks.append(_check(f"{eq.label} energy", str(exc), threshold, False))
            continue
        masses = [mass(f) for _, f in history.snapshots]
        drift = max_relative_deviation(masses)
        checks.append(_check(f"{eq.label} mass", drift, MASS_TOLERANCE, drift <= MASS_TOLERANCE))
        energy_drift = relative_energy_drift(history)
        checks.append(_check(f"{eq.label} energy", energy_drift, threshold, energy_drift <= threshold))

        # the dealias mask is not invertible, so reversal runs unmasked
        u = u0
        for _ in range(used.steps):
            u = strang_step(u, used.dt, eq)
        for _ in range(used.steps):
            u = strang_step(u, -used.dt, eq)
        back = lp_norm(u - u0, 2) / lp_norm(u0, 2)
        checks.append(_check(f"{eq.label} time reversal", back, 1e-6, back <= 1e-6))
    return checks


def _verify_quadrature() -> List[Dict[str, Any]]:
    checks = []
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        t = float(rng.uniform(1.0, 100.0))
        M = float(rng.uniform(0.01, 0.45)) * t

        def antiderivative(s: float) -> float:
            return (2.0 / t ** 2) * (2.0 * s - t) / math.sqrt(s * (t - s))

        exact = antiderivative(t - M) - antiderivative(M)
        worst = max(worst, abs(duhamel_kernel_integral(M, t, 3) - exact) / abs(exact))
    checks.append(_check("kernel antiderivative", worst, 1e-9, worst <= 1e-9))

    eq = EquationSpec(2, 5)
    grid = make_grid(2, 32.0, 64)
    u0 = GaussianDatum(4.0, 0.8).sample(grid)
    history = evolve(u0, eq, SolverConfig(1e-3, 1.0, 50))
    trace = DecayTrace()
    for t, f in history.snapshots[1:]:
        update_decay_trace(trace, t, f, 2)
    section = DuhamelSection(M=0.1, L=10.0, times=[0.5, 1.0], allow_small_L=False)
    result = duhamel_reports(history, trace, section)
    checks.append(_check("sign unique", result["sign_determination"].get("sign"), -1,
                         result["sign_determination"]["unique"] is True))
    for report in result["reports"]:
        tag = f"t={report['t']:g}"
        checks.append(_check(f"residual {tag}", report["full_residual"], 1e-3, report["full_residual"] <= 1e-3))
        checks.append(_check(f"split {tag}", report["residual"], 2 * report["full_residual"],
                             report["split_consistent"]))
        if report.get("coarse_residual") is not None:
            checks.append(_check(f"cadence {tag}", report["cadence_reduction"], CADENCE_REDUCTION,
                                 report["cadence_reduction"] >= CADENCE_REDUCTION))

    split = split_F(history, 1.0, DuhamelParams(0.5, 50.0, sign=-1))
    f2 = lp_norm(split.F2, 2)
    checks.append(_check("F2 vanishes at t=2M", f2, 0.0, f2 == 0.0))

    q, r = STRICHARTZ_PRESETS[(2, 5)]
    starts = np.linspace(0.0, 1.0, 11)
    tails = [strichartz_tail(history, float(s), q, r) for s in starts]
    checks.append(_check("strichartz monotone", None, None, bool(np.all(np.diff(tails) <= 0))))
    checks.append(_check("strichartz additivity", *_strichartz_split_error(history, q, r, 0.523)))
    return checks


def _strichartz_split_error(history: TrajectoryHistory, q: float, r: float,
                            tm: float) -> Tuple[float, float, bool]:
    """
    Meter integrals over [0, tm] and [tm, t_end] against plain trapezoid sums
    over the snapshot integrand with the linearly interpolated point at tm.
    """
    meter = StrichartzMeter(q, r)
    for t, f in history.snapshots:
        meter.add(t, f)
    times = np.asarray(meter.times)
    values = np.array([lp_norm(f, r) ** q for _, f in history.snapshots])
    j = int(np.searchsorted(times, tm))
    g = float(np.interp(tm, times, values))
    left = trapezoid(np.append(values[:j], g), np.append(times[:j], tm))
    right = trapezoid(np.insert(values[j:], 0, g), np.insert(times[j:], 0, tm))
    whole = trapezoid(values, times)
    errors = [
        abs(meter.integral(0.0, tm) - left) / left,
        abs(meter.integral(tm) - right) / right,
        abs(meter.integral(0.0, tm) + meter.integral(tm) - whole) / whole,
    ]
    error = max(errors)
    return error, 1e-12, error <= 1e-12


def _verify_lemmas() -> List[Dict[str, Any]]:
    checks = [
        _check("ele homogeneity", str(homogeneity_degree(ELE_EXPONENTS)), "1",
               homogeneity_degree(ELE_EXPONENTS) == 1),
        _check("ele2 homogeneity", str(homogeneity_degree(ELE2_EXPONENTS)), "1",
               homogeneity_degree(ELE2_EXPONENTS) == 1),
    ]
    grid = make_grid(3, 16.0, 16)
    spec = RandomFieldSpec(grid, 0.5 * lattice_for(grid).max_wavenumber, 3.0, 0)
    f = random_band_limited(spec)
    for name, ratio in (("ele", lemma_ele_ratio), ("ele2", lemma_ele2_ratio)):
        base = ratio(f)
        scaled = abs(ratio(f * (2.5 - 1.5j)) - base) / base
        checks.append(_check(f"{name} scaling", scaled, 1e-12, scaled <= 1e-12))
        shifted = f.with_values(np.roll(f.values, (3, -2, 5), axis=(0, 1, 2)))
        moved = abs(ratio(shifted) - base) / base
        checks.append(_check(f"{name} translation", moved, 1e-12, moved <= 1e-12))
        first = run_lemma_suite(name, spec, 50)
        second = run_lemma_suite(name, spec, 50)
        checks.append(_check(f"{name} determinism", first.max_ratio, second.max_ratio,
                             first.max_ratio == second.max_ratio))
        fine = run_lemma_suite(name, RandomFieldSpec(grid.refined(2), spec.spectral_cutoff, 3.0, 0), 50)
        change = abs(fine.max_ratio - first.max_ratio) / first.max_ratio
        checks.append(_check(f"{name} refinement", change, LEMMA_REFINEMENT_TOLERANCE,
                             change < LEMMA_REFINEMENT_TOLERANCE))
    return checks


def _verify_pseudo_conformal() -> List[Dict[str, Any]]:
    cfg = parse_config_dict({"schema_version": SCHEMA_VERSION, "scenario": "pseudo-conformal"})
    grid = cfg.grid_spec()
    history = evolve(cfg.gaussian().sample(grid), cfg.equation_spec(), cfg.solver_config())
    target = make_grid(grid.dimension, grid.half_width, grid.points_per_axis)
    frame = pseudo_conformal_records(history, cfg.pseudo_conformal.times, target, cfg.solver.dt)
    checks = []
    for _, row in frame.iterrows():
        checks.append(_check(f"mass t={row['t']:g}", row["mass_error"], 1e-8, row["mass_error"] <= 1e-8))
        checks.append(_check(f"free residual t={row['t']:g}", row["residual"], 1e-4, row["residual"] <= 1e-4))
    return checks


VERIFY_SUITES: Dict[str, Callable[[], List[Dict[str, Any]]]] = {
    "oracle": _verify_oracle,
    "dispersive": _verify_dispersive,
    "conservation": _verify_conservation,
    "quadrature": _verify_quadrature,
    "lemmas": _verify_lemmas,
    "pseudo-conformal": _verify_pseudo_conformal,
}


def verify(suite: str) -> Dict[str, Any]:
    """
    Run a built-in acceptance suite (or "all").

    Returns:
        Dict: ``{"suite", "passed", "checks"}`` with one record per check.
    """
    if suite != "all" and suite not in VERIFY_SUITES:
        raise ValidationError(f"Unknown suite '{suite}', expected one of {sorted(VERIFY_SUITES) + ['all']}")
    names = list(VERIFY_SUITES) if suite == "all" else [suite]
    checks: List[Dict[str, Any]] = []
    for name in names:
        logger.info(f"Verifying {name}")
        for record in VERIFY_SUITES[name]():
            record["suite"] = name
            checks.append(record)
    passed = all(c["passed"] for c in checks)
    logger.info(f"Suite {suite}: {'pass' if passed else 'fail'} ({len(checks)} checks)")
    return {"suite": suite, "passed": passed, "checks": checks}


__all__ = ["VERIFY_SUITES", "verify"]
