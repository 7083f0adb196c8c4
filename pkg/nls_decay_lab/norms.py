"""
Norms and time-weighted diagnostics.

Quadrature conventions: L^p norms are uniform-grid sums times h^d; H^s and
gradient norms are spectral with the multipliers ``(1+|k|^2)^{s/2}`` and
``|k|``. Sup norms are sample maxima, optionally after zero-padded spectral
upsampling.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import QuadratureError, ValidationError
from nls_decay_lab.grid import (
    ComplexField,
    SpectralField,
    forward_transform,
    inverse_transform,
    lattice_for,
    upsample,
)
from nls_decay_lab.utils import atomic_write

if TYPE_CHECKING:
    from nls_decay_lab.propagators import EquationSpec, TrajectoryHistory


logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "sup", "weighted", "A")
OPTIONAL_COLUMNS = ("mass", "energy", "Hs")
MIN_FIT_SAMPLES = 8

# (d, q) -> (time exponent, space exponent) of the scattering norm
STRICHARTZ_PRESETS: Dict[Tuple[int, int], Tuple[float, float]] = {
    (3, 5): (10.0, 10.0),
    (3, 3): (5.0, 5.0),
    (2, 5): (8.0, 8.0),
}


def lp_norm(f: ComplexField, p: float, refine: bool = False) -> float:
    """
    Grid L^p norm ``(sum |f|^p h^d)^{1/p}``; p = inf gives the sample maximum.

    Args:
        f: Field.
        p: Exponent in [1, inf].
        refine: For p = inf, take the maximum after spectral upsampling.

    Raises:
        ValidationError: If p < 1.
    """
    if not p >= 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    if math.isinf(p):
        if refine:
            f = upsample(f, get_config().numerics.sup_upsample_factor)
        return float(np.max(np.abs(f.values)))
    total = np.sum(np.abs(f.values) ** p) * f.grid.volume_element
    return float(total ** (1.0 / p))


def sup_norm(f: ComplexField, refine: bool = False) -> float:
    return lp_norm(f, math.inf, refine)


def _weighted_spectral_norm(f: ComplexField, weight: np.ndarray) -> float:
    spectrum = forward_transform(f)
    dk = spectrum.lattice.dk
    return float(np.sqrt(np.sum(weight * np.abs(spectrum.values) ** 2) * dk ** f.grid.dimension))


def sobolev_norm(f: ComplexField, s: float) -> float:
    """
    Spectral H^s norm with multiplier ``(1+|k|^2)^{s/2}``.

    Raises:
        ValidationError: If s < 0.
    """
    if not s >= 0:
        raise ValidationError(f"s must be >= 0, got {s}")
    k2 = lattice_for(f.grid).k_squared
    return _weighted_spectral_norm(f, (1.0 + k2) ** s)


def gradient_l2(f: ComplexField) -> float:
    """L2 norm of the spectral gradient."""
    return _weighted_spectral_norm(f, lattice_for(f.grid).k_squared)


def gradient_field(f: ComplexField) -> List[ComplexField]:
    """Spectral partial derivatives, one field per axis."""
    spectrum = forward_transform(f)
    parts = []
    for k in spectrum.lattice.k_axes():
        parts.append(inverse_transform(SpectralField(f.grid, 1j * k * spectrum.values, f.time_stamp)))
    return parts


def gradient_sup(f: ComplexField) -> float:
    """Maximum over the grid of ``|∇f|`` with the gradient computed spectrally."""
    squared = sum(np.abs(part.values) ** 2 for part in gradient_field(f))
    return float(np.sqrt(np.max(squared)))


def mass(f: ComplexField) -> float:
    """``∫|u|^2``."""
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.volume_element)


def energy(f: ComplexField, eq: "EquationSpec") -> float:
    """``∫ |∇u|^2/2 + |u|^{q+1}/(q+1)``; kinetic part only when the nonlinearity is off."""
    kinetic = 0.5 * gradient_l2(f) ** 2
    if not eq.nonlinear:
        return kinetic
    q = eq.exponent
    potential = np.sum(np.abs(f.values) ** (q + 1)) * f.grid.volume_element / (q + 1)
    return float(kinetic + potential)


@dataclass
class DecayTrace:
    """
    Time series of sup norms and the bootstrap quantity.

    Attributes:
        times: Increasing record times.
        sup_norms: ``||u(t)||_inf``.
        weighted: ``t^{d/2} ||u(t)||_inf``.
        A_running: Running maximum of ``weighted``.
        extras: Optional series (mass, energy, Hs) of the same length.
        refine: Whether sup norms use spectral upsampling.
    """

    times: List[float] = field(default_factory=list)
    sup_norms: List[float] = field(default_factory=list)
    weighted: List[float] = field(default_factory=list)
    A_running: List[float] = field(default_factory=list)
    extras: Dict[str, List[float]] = field(default_factory=dict)
    refine: bool = False

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_A(self) -> float:
        return self.A_running[-1] if self.A_running else 0.0

    def check(self) -> None:
        """Verify equal lengths and monotone A."""
        lengths = {len(self.times), len(self.sup_norms), len(self.weighted), len(self.A_running)}
        lengths.update(len(v) for v in self.extras.values())
        if len(lengths) > 1:
            raise ValidationError(f"Trace series lengths differ: {sorted(lengths)}")
        if np.any(np.diff(self.A_running) < 0):
            raise ValidationError("A_running is not monotone")

    def to_frame(self) -> pd.DataFrame:
        columns = {
            "t": self.times,
            "sup": self.sup_norms,
            "weighted": self.weighted,
            "A": self.A_running,
        }
        for name in OPTIONAL_COLUMNS:
            if name in self.extras:
                columns[name] = self.extras[name]
        for name, values in self.extras.items():
            columns.setdefault(name, values)
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        frame = self.to_frame()

        def _write(tmp: str) -> None:
            frame.to_csv(tmp, index=False, float_format="%.17g")

        return atomic_write(path, _write)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "DecayTrace":
        missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(f"Trace is missing columns {missing}")
        extras = {c: frame[c].astype(float).tolist() for c in frame.columns if c not in TRACE_COLUMNS}
        return cls(
            frame["t"].astype(float).tolist(),
            frame["sup"].astype(float).tolist(),
            frame["weighted"].astype(float).tolist(),
            frame["A"].astype(float).tolist(),
            extras,
        )

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DecayTrace":
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
            raise ValidationError(f"{path}: malformed trace CSV: {exc}") from exc
        return cls.from_frame(frame)


def update_decay_trace(trace: DecayTrace, t: float, f: ComplexField, d: int,
                       extras: Optional[Dict[str, float]] = None) -> DecayTrace:
    """
    Append one record to a trace.

    The weight is ``t^{d/2}`` (t^{3/2} in 3d, t in 2d).

    Args:
        trace: Trace to extend (modified in place and returned).
        t: Record time, greater than the last one.
        f: Field at time t.
        d: Dimension keying the weight exponent.
        extras: Optional extra series values for this record.

    Raises:
        ValidationError: If t does not exceed the last recorded time.
    """
    if trace.times and not t > trace.times[-1]:
        raise ValidationError(f"Time {t} does not exceed last recorded time {trace.times[-1]}")
    sup = sup_norm(f, trace.refine)
    weighted = (t ** (d / 2.0)) * sup
    previous = trace.A_running[-1] if trace.A_running else -math.inf
    trace.times.append(float(t))
    trace.sup_norms.append(sup)
    trace.weighted.append(weighted)
    trace.A_running.append(max(previous, weighted))
    for name, value in (extras or {}).items():
        trace.extras.setdefault(name, []).append(float(value))
    return trace


class DecayObserver:
    """
    Evolution observer that fills a DecayTrace with sup norms, mass, energy
    and an H^s norm at a fixed cadence of steps.
    """

    def __init__(self, eq: "EquationSpec", trace: Optional[DecayTrace] = None,
                 sobolev_index: Optional[float] = 3.0, every: int = 1,
                 refine: bool = False):
        self.eq = eq
        self.trace = trace if trace is not None else DecayTrace(refine=refine)
        self.sobolev_index = sobolev_index
        self.every = max(1, int(every))
        self._calls = 0

    def __call__(self, t: float, f: ComplexField) -> None:
        call = self._calls
        self._calls += 1
        if call % self.every:
            return
        extras = {"mass": mass(f), "energy": energy(f, self.eq)}
        if self.sobolev_index is not None:
            extras["Hs"] = sobolev_norm(f, self.sobolev_index)
        update_decay_trace(self.trace, t, f, self.eq.dimension, extras)


class StrichartzMeter:
    """
    Accumulates ``∫ ||u(t)||_r^q dt`` by the trapezoid rule over records.

    Between records the integrand is interpolated linearly, so integrals over
    adjacent intervals add up exactly (to roundoff).
    """

    def __init__(self, q: float, r: float):
        if q < 1 or r < 1:
            raise ValidationError(f"Strichartz exponents must be >= 1, got q={q}, r={r}")
        self.q = float(q)
        self.r = float(r)
        self.times: List[float] = []
        self.integrand: List[float] = []

    @classmethod
    def for_equation(cls, eq: "EquationSpec") -> "StrichartzMeter":
        """Meter with the scattering-norm exponents of one of the headline models."""
        key = (eq.dimension, eq.exponent)
        if key not in STRICHARTZ_PRESETS:
            raise ValidationError(f"No Strichartz preset for {eq.label}")
        return cls(*STRICHARTZ_PRESETS[key])

    def add(self, t: float, f: ComplexField) -> None:
        if self.times and not t > self.times[-1]:
            raise ValidationError(f"Time {t} does not exceed {self.times[-1]}")
        self.times.append(float(t))
        self.integrand.append(lp_norm(f, self.r) ** self.q)

    __call__ = add

    def _cumulative_at(self, t: float) -> float:
        times = np.asarray(self.times)
        values = np.asarray(self.integrand)
        cumulative = cumulative_trapezoid(values, times, initial=0.0)
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = min(max(j, 0), len(times) - 1)
        g = float(np.interp(t, times, values))
        return float(cumulative[j] + 0.5 * (t - times[j]) * (values[j] + g))

    def integral(self, start: float, end: Optional[float] = None) -> float:
        """``∫_start^end ||u||_r^q dt`` (end defaults to the last record)."""
        if len(self.times) < 2:
            raise QuadratureError("Strichartz integral needs at least 2 records")
        end = self.times[-1] if end is None else end
        lo, hi = self.times[0], self.times[-1]
        if not (lo <= start <= end <= hi):
            raise ValidationError(f"Interval [{start}, {end}] outside recorded [{lo}, {hi}]")
        return self._cumulative_at(end) - self._cumulative_at(start)

    def tail(self, start: float) -> float:
        """``(∫_start^{t_end} ||u||_r^q dt)^{1/q}``."""
        value = max(self.integral(start), 0.0)
        return value ** (1.0 / self.q)


def strichartz_tail(history: "TrajectoryHistory", start: float, q: float, r: float) -> float:
    """
    Strichartz tail ``(∫_start^{t_end} ||u||_r^q dt)^{1/q}`` over a history.

    Raises:
        QuadratureError: If the history has fewer than 2 snapshots.
        ValidationError: If start lies outside [0, t_end].
    """
    if len(history.snapshots) < 2:
        raise QuadratureError("Strichartz tail needs at least 2 snapshots")
    meter = StrichartzMeter(q, r)
    for t, f in history.snapshots:
        meter.add(t, f)
    if start == history.t_end:
        return 0.0
    return meter.tail(start)


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of ``log sup`` against ``log t``."""

    slope: float
    stderr: float
    intercept: float
    samples: int
    window: Tuple[float, float]


def fit_power_law(times: Sequence[float], values: Sequence[float],
                  window: Tuple[float, float]) -> DecayFit:
    """
    Fit ``values ~ C t^slope`` over the samples with t in the window.

    Raises:
        ValidationError: Fewer than 8 samples in the window, or nonpositive values.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = window
    selected = (t >= lo) & (t <= hi)
    if np.count_nonzero(selected) < MIN_FIT_SAMPLES:
        raise ValidationError(
            f"Window [{lo}, {hi}] holds {np.count_nonzero(selected)} samples; need {MIN_FIT_SAMPLES}"
        )
    if np.any(t[selected] <= 0) or np.any(v[selected] <= 0):
        raise ValidationError("Power-law fit needs positive times and norms in the window")
    result = stats.linregress(np.log(t[selected]), np.log(v[selected]))
    return DecayFit(float(result.slope), float(result.stderr), float(result.intercept),
                    int(np.count_nonzero(selected)), (float(lo), float(hi)))


def fit_decay_exponent(trace: DecayTrace, window: Tuple[float, float]) -> Tuple[float, float]:
    """
    Slope (and its standard error) of ``log ||u||_inf`` against ``log t`` in the window.
    """
    fit = fit_power_law(trace.times, trace.sup_norms, window)
    return fit.slope, fit.stderr


def plateau_change(trace: DecayTrace, window: Tuple[float, float], fraction: float = 0.2) -> float:
    """Relative change of A over the final ``fraction`` of the window."""
    t = np.asarray(trace.times)
    A = np.asarray(trace.A_running)
    lo, hi = window
    inside = (t >= lo) & (t <= hi)
    if not np.any(inside):
        raise ValidationError(f"No samples in window [{lo}, {hi}]")
    cut = hi - fraction * (hi - lo)
    head = A[inside & (t <= cut)]
    start = head[-1] if head.size else A[inside][0]
    end = A[inside][-1]
    return float((end - start) / end) if end > 0 else 0.0


def max_relative_deviation(values: Iterable[float]) -> float:
    """``max |v - v_0| / |v_0|``."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0 or arr[0] == 0:
        return 0.0
    return float(np.max(np.abs(arr - arr[0])) / abs(arr[0]))


__all__ = [
    "STRICHARTZ_PRESETS",
    "lp_norm",
    "sup_norm",
    "sobolev_norm",
    "gradient_l2",
    "gradient_field",
    "gradient_sup",
    "mass",
    "energy",
    "DecayTrace",
    "DecayObserver",
    "update_decay_trace",
    "StrichartzMeter",
    "strichartz_tail",
    "DecayFit",
    "fit_power_law",
    "fit_decay_exponent",
    "plateau_change",
    "max_relative_deviation",
]
