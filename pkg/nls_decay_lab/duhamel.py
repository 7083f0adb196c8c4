"""
Duhamel reconstruction of a stored trajectory and the three-way splitting
of its nonlinear part.

For ``i u_t + Δu = N(u)``,

    u(t) = e^{itΔ} u0 + sign * i * ∫_0^t e^{i(t-s)Δ} N(u(s)) ds

with ``sign = -1`` under the propagator conventions of this package. The
sign is kept as a parameter and can be re-derived from any run with
``determine_duhamel_sign``. The nonlinear part is split over
``[0, M]``, ``[M, t-M]`` and ``[t-M, t]`` into F1, F2 and F3.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad, simpson, trapezoid

from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import CoverageError, QuadratureError, ValidationError
from nls_decay_lab.grid import (
    ComplexField,
    SpectralField,
    apply_multiplier,
    dealias_mask,
    forward_transform,
    inverse_transform,
    lattice_for,
)
from nls_decay_lab.lemmas import lemma_ele2_ratio, lemma_ele_ratio
from nls_decay_lab.norms import gradient_l2, lp_norm, sobolev_norm, sup_norm
from nls_decay_lab.propagators import EquationSpec, TrajectoryHistory, linear_propagate


logger = logging.getLogger(__name__)

SIGN_TOLERANCE = 1e-2
ONSET_FACTOR = 100.0


@dataclass(frozen=True)
class DuhamelParams:
    """
    Splitting parameters.

    Attributes:
        M: Width of the near-boundary pieces.
        L: Perturbative onset time; L >= 100 M unless overridden.
        delta: Measured Strichartz tail at L/2.
        sign: Duhamel sign convention (+1 or -1).
    """

    M: float
    L: float
    delta: float = 0.0
    sign: int = -1

    def __post_init__(self) -> None:
        if not self.M > 0:
            raise ValidationError(f"M must be positive, got {self.M}")
        if not self.L > 0:
            raise ValidationError(f"L must be positive, got {self.L}")
        if not self.delta >= 0:
            raise ValidationError(f"delta must be nonnegative, got {self.delta}")
        if self.sign not in (1, -1):
            raise ValidationError(f"sign must be +1 or -1, got {self.sign}")

    def check_onset(self, allow_small_L: bool = False) -> None:
        """Enforce L >= 100 M; with the override only a warning is logged."""
        if self.L >= ONSET_FACTOR * self.M:
            return
        message = f"L={self.L} is below {ONSET_FACTOR:g} M = {ONSET_FACTOR * self.M}"
        if not allow_small_L:
            raise ValidationError(message)
        logger.warning(message + " (override active)")


@dataclass
class DuhamelIntegral:
    """A Duhamel integral and its cadence-halving error estimate (None when unavailable)."""

    field: ComplexField
    error_estimate: Optional[float]
    nodes: int


@dataclass
class DuhamelSplit:
    """
    ``u(t) ≈ u_linear + F1 + F2 + F3``.

    Attributes:
        t: Evaluation time.
        u_linear: ``e^{itΔ} u0``.
        F1, F2, F3: Pieces over [0, M], [M, t-M], [t-M, t].
        quadrature_error_estimate: Sum of the available piece estimates.
        residual: Relative L2 reconstruction residual against u(t).
        params: Splitting parameters.
    """

    t: float
    u_linear: ComplexField
    F1: ComplexField
    F2: ComplexField
    F3: ComplexField
    quadrature_error_estimate: float
    residual: float
    params: DuhamelParams

    def total(self) -> ComplexField:
        return self.u_linear + self.F1 + self.F2 + self.F3


def nonlinear_term(f: ComplexField, eq: EquationSpec, dealias: bool = False) -> ComplexField:
    """
    ``|f|^{q-1} f`` (zero when the nonlinearity is disabled).

    Args:
        f: Field.
        eq: Equation.
        dealias: Apply the two-thirds mask to the product.
    """
    if not eq.nonlinear:
        return ComplexField.zeros(f.grid, f.time_stamp)
    product = f.with_values(np.abs(f.values) ** (eq.exponent - 1) * f.values)
    if dealias:
        product = inverse_transform(apply_multiplier(forward_transform(product), dealias_mask(f.grid)))
    return product


def _history_dealias(history: TrajectoryHistory) -> bool:
    return history.solver.uses_dealiasing(history.equation) if history.solver else False


def _quadrature_weights(times: np.ndarray) -> np.ndarray:
    identity = np.eye(times.size)
    if times.size == 2:
        return trapezoid(identity, x=times, axis=1)
    return simpson(identity, x=times, axis=1)


def _check_range(history: TrajectoryHistory, t: float, t0: float, t1: float) -> None:
    eps = 1e-9 * max(1.0, abs(t))
    if not (-eps <= t0 <= t1 + eps and t1 <= t + eps):
        raise ValidationError(f"Range [{t0}, {t1}] is not inside [0, {t}]")
    if t > history.t_end + eps:
        raise CoverageError(f"t={t} beyond history end {history.t_end}")


def duhamel_integral_with_error(history: TrajectoryHistory, t: float, t_range: Tuple[float, float],
                                sign: Optional[int] = None, dealias: Optional[bool] = None,
                                workers: int = 1) -> DuhamelIntegral:
    """
    ``sign * i * ∫_{t0}^{t1} e^{i(t-s)Δ} N(u(s)) ds`` by composite quadrature over snapshots.

    Simpson weights are used with three or more nodes, the trapezoid rule
    with two. When the node count allows, the same integral on every other
    node gives an error estimate ``||I_h - I_2h|| / 15``.

    Integrals over adjacent ranges add up to roundoff when each range spans
    an even number of snapshot intervals. With an odd count the last panel
    gets its own correction, so the sum only matches to O(h^4).

    Args:
        history: Trajectory; the range endpoints must be snapshot times.
        t: Propagation target time.
        t_range: Integration range (t0, t1) inside [0, t].
        sign: Duhamel sign (configured default when None).
        dealias: Mask the nonlinear product (solver setting when None).
        workers: Threads propagating quadrature nodes; the reduction order is fixed.

    Raises:
        ValidationError: Range outside [0, t].
        CoverageError: Endpoints are not snapshot times or t beyond the history.
        QuadratureError: Fewer than two nodes in a nonempty range.
    """
    t0, t1 = (float(v) for v in t_range)
    _check_range(history, t, t0, t1)
    sign = get_config().solver.duhamel_sign if sign is None else sign
    dealias = _history_dealias(history) if dealias is None else dealias
    grid = history.grid

    if t1 - t0 <= 1e-12 * max(1.0, t):
        return DuhamelIntegral(ComplexField.zeros(grid, t), 0.0, 0)

    indices = history.indices_between(t0, t1)
    if len(indices) < 2:
        raise QuadratureError(f"Range [{t0}, {t1}] holds {len(indices)} snapshots; need at least 2")
    times = history.times[indices]
    tol = 1e-9 * max(1.0, t)
    if abs(times[0] - t0) > tol or abs(times[-1] - t1) > tol:
        raise CoverageError(f"Range endpoints [{t0}, {t1}] must be snapshot times")

    weights = _quadrature_weights(times)
    coarse_weights = None
    if times.size >= 5 and (times.size - 1) % 2 == 0:
        coarse = np.zeros_like(weights)
        coarse[::2] = _quadrature_weights(times[::2])
        coarse_weights = coarse

    k2 = lattice_for(grid).k_squared
    eq = history.equation

    def node_term(position: int) -> np.ndarray:
        s = times[position]
        u_s = history.snapshots[indices[position]][1]
        spectrum = forward_transform(nonlinear_term(u_s, eq, dealias)).values
        return np.exp(-1j * k2 * (t - s)) * spectrum

    fine = np.zeros(grid.shape, dtype=np.complex128)
    rough = np.zeros(grid.shape, dtype=np.complex128) if coarse_weights is not None else None
    positions = list(range(times.size))
    batch = max(1, workers) * 2
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for start in range(0, len(positions), batch):
            chunk = positions[start:start + batch]
            for position, term in zip(chunk, pool.map(node_term, chunk)):
                fine += weights[position] * term
                if rough is not None:
                    rough += coarse_weights[position] * term

    scale = sign * 1j
    result = inverse_transform(SpectralField(grid, scale * fine, t))
    error = None
    if rough is not None:
        error = SpectralField(grid, fine - rough).norm() / 15.0
    return DuhamelIntegral(result, error, int(times.size))


def duhamel_integral(history: TrajectoryHistory, t: float, t_range: Tuple[float, float],
                     sign: Optional[int] = None, dealias: Optional[bool] = None,
                     workers: int = 1) -> ComplexField:
    """Field part of ``duhamel_integral_with_error``."""
    return duhamel_integral_with_error(history, t, t_range, sign, dealias, workers).field


def _relative_l2(a: ComplexField, b: ComplexField) -> float:
    reference = lp_norm(b, 2)
    difference = lp_norm(a - b, 2)
    return difference / reference if reference > 0 else difference


def duhamel_residual(history: TrajectoryHistory, t: float, sign: Optional[int] = None,
                     workers: int = 1) -> float:
    """Relative L2 residual of the full-range reconstruction of u(t)."""
    u_t = history.field_at(t)
    u_linear = linear_propagate(history.snapshots[0][1], t)
    integral = duhamel_integral(history, t, (0.0, t), sign, workers=workers)
    return _relative_l2(u_linear + integral, u_t)


@dataclass(frozen=True)
class SignDetermination:
    sign: int
    residuals: Dict[int, float]


def determine_duhamel_sign(history: TrajectoryHistory, t: Optional[float] = None,
                           tolerance: float = SIGN_TOLERANCE) -> SignDetermination:
    """
    Decide the Duhamel sign from a run: exactly one sign must reconstruct u(t).

    Raises:
        QuadratureError: If neither or both signs pass the tolerance.
    """
    t = history.t_end if t is None else t
    u_t = history.field_at(t)
    u_linear = linear_propagate(history.snapshots[0][1], t)
    plus = duhamel_integral(history, t, (0.0, t), sign=1)
    residuals = {
        1: _relative_l2(u_linear + plus, u_t),
        -1: _relative_l2(u_linear - plus, u_t),
    }
    passing = [s for s, r in residuals.items() if r < tolerance]
    logger.info(f"Duhamel sign residuals: +1 -> {residuals[1]:.3e}, -1 -> {residuals[-1]:.3e}")
    if len(passing) != 1:
        raise QuadratureError(f"Sign undetermined: residuals {residuals} against tolerance {tolerance}")
    return SignDetermination(passing[0], residuals)


def split_F(history: TrajectoryHistory, t: float, params: DuhamelParams,
            workers: int = 1) -> DuhamelSplit:
    """
    Reconstruct u(t) as ``u_linear + F1 + F2 + F3``.

    Raises:
        ValidationError: If t < 2M.
        CoverageError: If the history does not cover [0, t] with snapshots at M and t-M.
    """
    M = params.M
    if t < 2.0 * M * (1.0 - 1e-12):
        raise ValidationError(f"t={t} is smaller than 2M={2 * M}")
    if t > history.t_end + 1e-9 * max(1.0, t):
        raise CoverageError(f"t={t} beyond history end {history.t_end}")
    u_t = history.field_at(t)
    u_linear = linear_propagate(history.snapshots[0][1], t)
    pieces = [
        duhamel_integral_with_error(history, t, (0.0, M), params.sign, workers=workers),
        duhamel_integral_with_error(history, t, (M, t - M), params.sign, workers=workers),
        duhamel_integral_with_error(history, t, (t - M, t), params.sign, workers=workers),
    ]
    estimate = float(sum(p.error_estimate for p in pieces if p.error_estimate is not None))
    total = u_linear + pieces[0].field + pieces[1].field + pieces[2].field
    residual = _relative_l2(total, u_t)
    logger.info(f"Split at t={t} (M={M}): residual {residual:.3e}")
    return DuhamelSplit(t, u_linear, pieces[0].field, pieces[1].field, pieces[2].field,
                        estimate, residual, params)


def weighted_piece_report(split: DuhamelSplit, d: int, A: Optional[float] = None,
                          M1: Optional[float] = None) -> Dict[str, Any]:
    """
    Time-weighted sup norms of each piece, next to the run's A and M1.

    The weight is ``t^{d/2}``. For d = 3 the F3 norms the proofs control
    (L2, H3, gradient L2, H4) and the interpolation ratios applied to F3
    are included.
    """
    weight = split.t ** (d / 2.0)
    pieces = {"u_linear": split.u_linear, "F1": split.F1, "F2": split.F2, "F3": split.F3}
    weighted = {name: weight * sup_norm(f) for name, f in pieces.items()}
    report: Dict[str, Any] = {
        "t": split.t,
        "M": split.params.M,
        "L": split.params.L,
        "delta_measured": split.params.delta,
        "sign": split.params.sign,
        "residual": split.residual,
        "quadrature_error_estimate": split.quadrature_error_estimate,
        "weight": weight,
        "weighted_norms": weighted,
        "A": A,
        "M1": M1,
    }
    if A:
        report["fractions_of_A"] = {name: value / A for name, value in weighted.items()}

    F3 = split.F3
    f3_norms = {
        "L2": lp_norm(F3, 2),
        "H3": sobolev_norm(F3, 3),
        "grad_L2": gradient_l2(F3),
        "H4": sobolev_norm(F3, 4),
    }
    report["F3_norms"] = f3_norms
    if d == 3 and f3_norms["L2"] > 0:
        report["F3_lemma_ratios"] = {"ele": lemma_ele_ratio(F3), "ele2": lemma_ele2_ratio(F3)}
    return report


def f2_strichartz_weight(history: TrajectoryHistory, t: float, M: float, r: float = 8.0) -> Dict[str, float]:
    """
    The 2d F2 diagnostic ``∫_M^{t-M} (t-s)^{-1} s^{-1} ||u(s)||_{L^r} ds`` and
    its Hölder bound
    ``2 t^{-1} [ (∫_M^{t/2} s^{-r/(r-1)})^{(r-1)/r} + (same on [t/2, t-M]) ] ||u||_{L^r_{t,x}}``.
    """
    if t < 2.0 * M:
        raise ValidationError(f"t={t} is smaller than 2M={2 * M}")
    indices = history.indices_between(M, t - M)
    if len(indices) < 2:
        raise QuadratureError("F2 weight needs at least 2 snapshots in [M, t-M]")
    times = history.times[indices]
    norms = np.array([lp_norm(history.snapshots[i][1], r) for i in indices])
    integral = float(np.dot(_quadrature_weights(times), norms / ((t - times) * times)))

    all_times = history.times
    all_norms = np.array([lp_norm(f, r) ** r for _, f in history.snapshots])
    spacetime = float(trapezoid(all_norms, x=all_times)) ** (1.0 / r)
    conjugate = r / (r - 1.0)
    half = 0.5 * t
    # ∫_M^{t/2} s^{-p'} ds in closed form; the second half is the same by symmetry
    side = (M ** (1.0 - conjugate) - half ** (1.0 - conjugate)) / (conjugate - 1.0)
    bound = (4.0 / t) * side ** (1.0 / conjugate) * spacetime
    return {"integral": integral, "holder_bound": bound, "spacetime_norm": spacetime}


def duhamel_kernel_integral(M: float, t: float, d: int) -> float:
    """
    ``∫_M^{t-M} (t-s)^{-d/2} s^{-d/2} ds`` by adaptive quadrature.

    The integrand is symmetric about t/2; the half integral is computed in
    the variable ``log s``.
    """
    if not 0 < M <= t / 2.0:
        raise ValidationError(f"Need 0 < M <= t/2, got M={M}, t={t}")
    if M == t / 2.0:
        return 0.0
    a = d / 2.0

    def integrand(log_s: float) -> float:
        s = math.exp(log_s)
        return (t - s) ** (-a) * s ** (1.0 - a)

    value, _ = quad(integrand, math.log(M), math.log(t / 2.0), epsabs=0.0, epsrel=1e-13, limit=500)
    return 2.0 * value


def choose_M_bound(M1: float, t: float, d: int, q: int,
                   search_grid: Optional[Sequence[float]] = None) -> float:
    """
    Smallest M on a search grid with ``M1^{q-1} I(M) <= t^{-d/2} / 10`` (constant C = 1).

    Args:
        M1: Bound on the H^s trace.
        t: Evaluation time.
        d: Dimension.
        q: Nonlinearity exponent.
        search_grid: Candidate M values; defaults to 200 geometric points in
            ``[1e-6 t, 0.49 t]``.

    Raises:
        ValidationError: If M1 <= 0 or t <= 0.
        QuadratureError: If no candidate meets the criterion; the message
            gives the best ratio achieved.
    """
    if not M1 > 0 or not t > 0:
        raise ValidationError(f"Need M1 > 0 and t > 0, got M1={M1}, t={t}")
    grid = np.geomspace(1e-6 * t, 0.49 * t, 200) if search_grid is None else np.asarray(search_grid, float)
    candidates = sorted(m for m in grid if 0 < m < t / 2.0)
    target = 0.1 * t ** (-d / 2.0)
    best = math.inf
    for M in candidates:
        ratio = M1 ** (q - 1) * duhamel_kernel_integral(M, t, d) / target
        best = min(best, ratio)
        if ratio <= 1.0:
            return float(M)
    raise QuadratureError(f"No M on the search grid meets the criterion; best ratio {best:.4g}")


__all__ = [
    "DuhamelParams",
    "DuhamelIntegral",
    "DuhamelSplit",
    "SignDetermination",
    "nonlinear_term",
    "duhamel_integral",
    "duhamel_integral_with_error",
    "duhamel_residual",
    "determine_duhamel_sign",
    "split_F",
    "weighted_piece_report",
    "f2_strichartz_weight",
    "duhamel_kernel_integral",
    "choose_M_bound",
]
