"""
Closed-form oracles and symmetry transforms.

* Exact free evolution of a complex Gaussian, used as an independent check of
  the spectral propagator and of the dispersive estimate.
* The pseudo-conformal transform
  ``u(t, x) = t^{-d/2} conj(v)(1/t, x/t) exp(i|x|^2 / (4t))``
  which maps solutions of a mass-critical equation (or of the free equation)
  to solutions.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from nls_decay_lab.exceptions import CoverageError, GridError, ValidationError
from nls_decay_lab.grid import ComplexField, GridSpec, evaluate_trigonometric, sample_function
from nls_decay_lab.norms import lp_norm, sup_norm
from nls_decay_lab.propagators import TrajectoryHistory, linear_propagate


logger = logging.getLogger(__name__)

MIN_POINTS_PER_WIDTH = 4.0
MIN_BOX_WIDTHS = 8.0


@dataclass(frozen=True)
class GaussianDatum:
    """
    ``amplitude * exp(-|x - center|^2 / (2 sigma^2))``.

    Attributes:
        sigma: Width.
        amplitude: Complex amplitude.
        center: Centre point; the origin when None.
    """

    sigma: float
    amplitude: complex = 1.0
    center: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")

    def centre_for(self, grid: GridSpec) -> Tuple[float, ...]:
        if self.center is None:
            return (0.0,) * grid.dimension
        if len(self.center) != grid.dimension:
            raise GridError(f"Centre {self.center} does not match dimension {grid.dimension}")
        return tuple(float(c) for c in self.center)

    def check_resolution(self, grid: GridSpec) -> bool:
        """Warn (and return False) when sigma < 4h or l < 8 sigma."""
        ok = True
        if self.sigma < MIN_POINTS_PER_WIDTH * grid.spacing:
            logger.warning(f"Gaussian width {self.sigma:.4g} under-resolved by spacing {grid.spacing:.4g}")
            ok = False
        if grid.half_width < MIN_BOX_WIDTHS * self.sigma:
            logger.warning(f"Box half-width {grid.half_width:.4g} is below 8 sigma = {8 * self.sigma:.4g}")
            ok = False
        return ok

    def l1_norm(self, d: int) -> float:
        """Whole-space L1 norm ``|A| (2 pi sigma^2)^{d/2}``."""
        return abs(self.amplitude) * (2.0 * math.pi * self.sigma ** 2) ** (d / 2.0)

    def sup_at(self, t: float, d: int) -> float:
        """Whole-space sup norm of the free evolution at time t."""
        return abs(self.amplitude) * (1.0 + 4.0 * t ** 2 / self.sigma ** 4) ** (-d / 4.0)

    def sample(self, grid: GridSpec) -> ComplexField:
        return gaussian_free_evolution(self, 0.0, grid)


def dispersive_limit(d: int) -> float:
    """Large-time limit ``(4 pi)^{-d/2}`` of the Gaussian dispersive ratio."""
    return (4.0 * math.pi) ** (-d / 2.0)


def _minimum_image(x: np.ndarray, c: float, half_width: float) -> np.ndarray:
    return np.mod(x - c + half_width, 2.0 * half_width) - half_width


def gaussian_free_evolution(g: GaussianDatum, t: float, grid: GridSpec) -> ComplexField:
    """
    Sample the exact free evolution of a Gaussian under ``i u_t + Δu = 0``:

        A (1 + 2it/sigma^2)^{-d/2} exp(-|x - c|^2 / (2 sigma^2 (1 + 2it/sigma^2)))

    Displacements use the minimum image on the box. The result is stamped with t.
    """
    g.check_resolution(grid)
    d = grid.dimension
    centre = g.centre_for(grid)
    spread = 1.0 + 2j * t / g.sigma ** 2
    prefactor = g.amplitude * spread ** (-d / 2.0)

    def profile(*coords: np.ndarray) -> np.ndarray:
        r2 = sum(_minimum_image(x, c, grid.half_width) ** 2 for x, c in zip(coords, centre))
        return prefactor * np.exp(-r2 / (2.0 * g.sigma ** 2 * spread))

    return sample_function(grid, profile, float(t))


def dispersive_ratio(u0: ComplexField, t: float, d: Optional[int] = None,
                     refine: bool = False) -> float:
    """
    ``||e^{itΔ} u0||_inf * t^{d/2} / ||u0||_1``.

    Raises:
        ValidationError: If t <= 0, the dimension disagrees with the grid, or
            u0 has zero L1 norm.
    """
    d = u0.grid.dimension if d is None else d
    if d != u0.grid.dimension:
        raise ValidationError(f"Dimension {d} does not match the grid dimension {u0.grid.dimension}")
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    l1 = lp_norm(u0, 1)
    if l1 == 0:
        raise ValidationError("Dispersive ratio of a datum with zero L1 norm is undefined")
    return sup_norm(linear_propagate(u0, t), refine) * t ** (d / 2.0) / l1


@dataclass
class PseudoConformalResult:
    """
    Transformed field and provenance.

    Attributes:
        field: u(t) on the target grid.
        source_time: 1/t.
        interpolated: Whether v(1/t) was interpolated between snapshots.
        interpolation_error: Relative L2 estimate of the time-interpolation
            error (0 when a snapshot was hit).
        source_l2: L2 norm of the (possibly interpolated) v(1/t).
        source_sup: Sup norm of v(1/t) over its grid samples.
        source: The (possibly interpolated) v(1/t) itself.
    """

    field: ComplexField
    source_time: float
    interpolated: bool
    interpolation_error: float
    source_l2: float
    source_sup: float
    source: ComplexField


def _source_field(v_history: TrajectoryHistory, s: float) -> Tuple[ComplexField, bool, float]:
    times = v_history.times
    eps = 1e-9 * max(1.0, s)
    if s < times[0] - eps or s > times[-1] + eps:
        raise CoverageError(f"v history covers [{times[0]}, {times[-1]}], not {s}")
    try:
        return v_history.field_at(s), False, 0.0
    except CoverageError:
        pass

    i = int(np.searchsorted(times, s, side="right")) - 1
    t0, t1 = times[i], times[i + 1]
    theta = (s - t0) / (t1 - t0)
    v0 = v_history.snapshots[i][1]
    v1 = v_history.snapshots[i + 1][1]
    blended = v0 * (1.0 - theta) + v1 * theta
    scale = lp_norm(blended, 2) or 1.0
    if len(times) >= 3:
        # second difference over the nearest three snapshots
        j = min(max(i, 1), len(times) - 2)
        a, b, c = (v_history.snapshots[k][1] for k in (j - 1, j, j + 1))
        spacing = 0.5 * (times[j + 1] - times[j - 1])
        curvature = lp_norm(a - b * 2.0 + c, 2) / spacing ** 2
        error = 0.5 * theta * (1.0 - theta) * (t1 - t0) ** 2 * curvature / scale
    else:
        error = theta * (1.0 - theta) * lp_norm(v1 - v0, 2) / scale
    logger.warning(f"v(1/t) interpolated at s={s:.6g} between {t0:.6g} and {t1:.6g};"
                   f" relative error estimate {error:.3e}")
    return blended, True, float(error)


def pseudo_conformal_field(v: ComplexField, t: float, target_grid: GridSpec) -> ComplexField:
    """
    Map a single field ``v = v(1/t, .)`` to ``u(t, .)`` on ``target_grid``.

    Raises:
        ValidationError: If t <= 0.
        GridError: If dimensions differ or some x/t leaves v's box.
    """
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    d = target_grid.dimension
    if d != v.grid.dimension:
        raise GridError(f"Target dimension {d} differs from history dimension {v.grid.dimension}")
    axis = target_grid.axis()
    reach = float(np.max(np.abs(axis))) / t
    if reach > v.grid.half_width * (1.0 + 1e-12):
        raise GridError(f"x/t reaches {reach:.6g}, outside the box of half-width {v.grid.half_width}")
    values = evaluate_trigonometric(v, (axis / t,) * d)
    phase = np.exp(1j * target_grid.radius_squared() / (4.0 * t))
    return ComplexField(target_grid, t ** (-d / 2.0) * np.conj(values) * phase, float(t))


def pseudo_conformal_with_error(v_history: TrajectoryHistory, t: float,
                                target_grid: GridSpec) -> PseudoConformalResult:
    """
    Build ``u(t, .)`` on ``target_grid`` from a history of v.

    v is evaluated at ``x/t`` by trigonometric interpolation, conjugated,
    scaled by ``t^{-d/2}`` and multiplied by ``exp(i|x|^2/(4t))``. When 1/t
    is not a snapshot time, v is interpolated linearly between the bracketing
    snapshots and the induced error is estimated.

    Raises:
        ValidationError: If t <= 0.
        GridError: If dimensions differ or some x/t leaves v's box.
        CoverageError: If 1/t lies outside the history.
    """
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    s = 1.0 / t
    v, interpolated, error = _source_field(v_history, s)
    u = pseudo_conformal_field(v, t, target_grid)
    return PseudoConformalResult(u, s, interpolated, error, lp_norm(v, 2), sup_norm(v), v)


def pseudo_conformal(v_history: TrajectoryHistory, t: float, target_grid: GridSpec) -> ComplexField:
    """Field part of ``pseudo_conformal_with_error``."""
    return pseudo_conformal_with_error(v_history, t, target_grid).field


__all__ = [
    "GaussianDatum",
    "PseudoConformalResult",
    "dispersive_limit",
    "gaussian_free_evolution",
    "dispersive_ratio",
    "pseudo_conformal",
    "pseudo_conformal_field",
    "pseudo_conformal_with_error",
]
