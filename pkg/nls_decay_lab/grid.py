"""
Spectral core: grids, discrete Fourier transforms, spectral multipliers and
complex field arithmetic.

Conventions, fixed once and used everywhere:

* The box is ``[-l, l)^d`` sampled with ``n`` points per axis,
  ``x_j = -l + j*h`` with ``h = 2l/n``. Field values are stored as numpy arrays
  of shape ``(n,)*d``; axis 0 is ``x_1``. The flat (serialised) order is numpy
  C order (row-major, last axis fastest), so flat index
  ``i = sum_a j_a * n**(d-1-a)``.
* Wavenumbers are ``k = (pi/l)*m`` with ``m`` in ``[-n/2, n/2)``, laid out in
  FFT order (``m = 0, 1, ..., n/2-1, -n/2, ..., -1``).
* The forward transform approximates the unitary continuous transform
  ``(2*pi)^(-d/2) * integral f(x) exp(-i k.x) dx``, so
  ``F = (h/sqrt(2*pi))^d * (-1)^(sum m) * fftn(f)``. With ``dk = pi/l``,
  Parseval reads ``sum |f|^2 h^d == sum |F|^2 dk^d``.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.fft

from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import GridError, ValidationError
from nls_decay_lab.validator import NumericValidator, PowerOfTwoValidator


logger = logging.getLogger(__name__)

MIN_POINTS = 8
SUPPORTED_DIMENSIONS = (1, 2, 3)


@dataclass(frozen=True)
class GridSpec:
    """
    Periodic box ``[-l, l)^d`` with ``n`` points per axis.

    Attributes:
        dimension: Spatial dimension d in {1, 2, 3}.
        half_width: Half box length l.
        points_per_axis: Points per axis n, a power of two no smaller than 8.
    """

    dimension: int
    half_width: float
    points_per_axis: int

    @property
    def spacing(self) -> float:
        """Grid spacing h = 2l/n."""
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def volume_element(self) -> float:
        """Quadrature weight h^d."""
        return self.spacing ** self.dimension

    @property
    def box_volume(self) -> float:
        """Box volume (2l)^d."""
        return (2.0 * self.half_width) ** self.dimension

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dimension

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dimension

    def axis(self) -> np.ndarray:
        """One-dimensional coordinates ``-l + j*h`` shared by every axis."""
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Open-mesh coordinate arrays that broadcast to ``shape``."""
        axis = self.axis()
        return tuple(np.meshgrid(*([axis] * self.dimension), indexing="ij", sparse=True))

    def radius_squared(self) -> np.ndarray:
        """|x|^2 on the grid."""
        return sum(x ** 2 for x in self.coordinates())

    def coordinate_of(self, flat_index: int) -> Tuple[float, ...]:
        """Map a flat (C order) index to its coordinate tuple."""
        if not 0 <= flat_index < self.size:
            raise GridError(f"Flat index {flat_index} outside [0, {self.size})")
        multi = np.unravel_index(flat_index, self.shape)
        return tuple(-self.half_width + self.spacing * int(j) for j in multi)

    def index_of(self, point: Tuple[float, ...]) -> int:
        """Map a grid coordinate tuple back to its flat (C order) index."""
        if len(point) != self.dimension:
            raise GridError(f"Point has {len(point)} coordinates, grid has dimension {self.dimension}")
        multi = []
        for x in point:
            j = int(round((x + self.half_width) / self.spacing))
            if not 0 <= j < self.points_per_axis:
                raise GridError(f"Coordinate {x} lies outside the box")
            multi.append(j)
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def refined(self, factor: int) -> "GridSpec":
        """Same box with ``factor`` times as many points per axis."""
        return make_grid(self.dimension, self.half_width, self.points_per_axis * factor)


def make_grid(d: int, half_width: float, n: int) -> GridSpec:
    """
    Build a validated grid.

    Args:
        d: Dimension, one of 1, 2, 3.
        half_width: Positive half box length l.
        n: Points per axis, a power of two, at least 8.

    Returns:
        GridSpec: The grid.

    Raises:
        GridError: If any parameter is out of range.
    """
    problems = []
    if d not in SUPPORTED_DIMENSIONS:
        problems.append(f"dimension {d} not in {SUPPORTED_DIMENSIONS}")
    size_check = PowerOfTwoValidator(minimum=MIN_POINTS)
    if not size_check.validate(n):
        problems.append(f"points_per_axis: {size_check.get_error_message()}")
    width_check = NumericValidator(min_value=0.0, exclusive_min=True)
    if not width_check.validate(half_width):
        problems.append(f"half_width: {width_check.get_error_message()}")
    if problems:
        raise GridError("; ".join(problems))
    return GridSpec(int(d), float(half_width), int(n))


@dataclass(frozen=True)
class FrequencyLattice:
    """
    Dual lattice of a grid, in FFT order.

    Attributes:
        grid: The grid this lattice belongs to.
        indices: Integer mode numbers m per axis, FFT order.
        wavenumbers: k = (pi/l) m per axis.
    """

    grid: GridSpec
    indices: np.ndarray = field(repr=False)
    wavenumbers: np.ndarray = field(repr=False)

    @property
    def dk(self) -> float:
        return np.pi / self.grid.half_width

    @property
    def max_wavenumber(self) -> float:
        """(pi/l)(n/2), the modulus of the Nyquist wavenumber."""
        return self.dk * (self.grid.points_per_axis // 2)

    def k_axes(self) -> Tuple[np.ndarray, ...]:
        """Open-mesh wavenumber arrays that broadcast to the grid shape."""
        return tuple(
            np.meshgrid(*([self.wavenumbers] * self.grid.dimension), indexing="ij", sparse=True)
        )

    @property
    def k_squared(self) -> np.ndarray:
        """|k|^2 table per grid index."""
        return _k_squared(self.grid)

    def modulus(self) -> np.ndarray:
        return np.sqrt(self.k_squared)

    def index_parity(self) -> np.ndarray:
        """(-1)^(sum m), the phase relating the DFT to a box centred at the origin."""
        return _parity(self.grid)


@lru_cache(maxsize=32)
def lattice_for(grid: GridSpec) -> FrequencyLattice:
    """Return the (cached) frequency lattice of a grid."""
    n = grid.points_per_axis
    indices = np.rint(scipy.fft.fftfreq(n) * n).astype(np.int64)
    wavenumbers = 2.0 * np.pi * scipy.fft.fftfreq(n, d=grid.spacing)
    indices.setflags(write=False)
    wavenumbers.setflags(write=False)
    return FrequencyLattice(grid=grid, indices=indices, wavenumbers=wavenumbers)


@lru_cache(maxsize=32)
def _k_squared(grid: GridSpec) -> np.ndarray:
    lattice = lattice_for(grid)
    table = np.zeros(grid.shape)
    for k in lattice.k_axes():
        table = table + k ** 2
    table.setflags(write=False)
    return table


@lru_cache(maxsize=32)
def _parity(grid: GridSpec) -> np.ndarray:
    lattice = lattice_for(grid)
    m = np.meshgrid(*([lattice.indices] * grid.dimension), indexing="ij", sparse=True)
    parity = np.where(sum(m) % 2 == 0, 1.0, -1.0)
    parity = np.broadcast_to(parity, grid.shape).copy()
    parity.setflags(write=False)
    return parity


@lru_cache(maxsize=32)
def dealias_mask(grid: GridSpec) -> np.ndarray:
    """
    Two-thirds rule mask: keeps modes with every ``|m_a| <= n/3``.

    Returns:
        np.ndarray: Float mask (1 kept, 0 removed) of the grid shape.
    """
    lattice = lattice_for(grid)
    keep = (np.abs(lattice.indices) <= grid.points_per_axis // 3).astype(float)
    mask = np.ones(grid.shape)
    for axis in range(grid.dimension):
        shape = [1] * grid.dimension
        shape[axis] = grid.points_per_axis
        mask = mask * keep.reshape(shape)
    mask.setflags(write=False)
    return mask


def _as_grid_array(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim == 1 and grid.dimension > 1 and arr.size == grid.size:
        arr = arr.reshape(grid.shape)
    if arr.shape != grid.shape:
        raise GridError(f"Values of shape {arr.shape} do not match grid shape {grid.shape}")
    return arr


@dataclass
class ComplexField:
    """
    Complex samples of a function on a grid.

    Attributes:
        grid: The grid.
        values: Complex array of the grid shape (flat C-order input is reshaped).
        time_stamp: Optional model time.
    """

    grid: GridSpec
    values: np.ndarray
    time_stamp: Optional[float] = None

    def __post_init__(self) -> None:
        self.values = _as_grid_array(self.grid, self.values)
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values.ravel()))[0])
            raise ValidationError(
                f"Non-finite field value at {self.grid.coordinate_of(bad)}"
            )

    @property
    def flat(self) -> np.ndarray:
        """Values in the documented flat (C) order."""
        return self.values.ravel()

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy(), self.time_stamp)

    def with_values(self, values: np.ndarray, time_stamp: Optional[float] = None) -> "ComplexField":
        """New field on the same grid; keeps the time stamp unless one is given."""
        stamp = self.time_stamp if time_stamp is None else time_stamp
        return ComplexField(self.grid, values, stamp)

    def _check_grid(self, other: "ComplexField") -> None:
        if other.grid != self.grid:
            raise GridError(f"Grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other: "ComplexField") -> "ComplexField":
        self._check_grid(other)
        return ComplexField(self.grid, self.values + other.values, self.time_stamp)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        self._check_grid(other)
        return ComplexField(self.grid, self.values - other.values, self.time_stamp)

    def __mul__(self, scalar: complex) -> "ComplexField":
        return ComplexField(self.grid, self.values * scalar, self.time_stamp)

    __rmul__ = __mul__

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values), self.time_stamp)

    @classmethod
    def zeros(cls, grid: GridSpec, time_stamp: Optional[float] = None) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), time_stamp)


@dataclass
class SpectralField:
    """Fourier coefficients of a ComplexField (see module docstring for normalisation)."""

    grid: GridSpec
    values: np.ndarray
    time_stamp: Optional[float] = None

    def __post_init__(self) -> None:
        self.values = _as_grid_array(self.grid, self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("Non-finite spectral coefficient")

    @property
    def lattice(self) -> FrequencyLattice:
        return lattice_for(self.grid)

    def norm(self) -> float:
        """Spectral L2 norm ``sqrt(sum |F|^2 dk^d)``; equals the grid L2 norm."""
        dk = self.lattice.dk
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * dk ** self.grid.dimension))


def _transform_scale(grid: GridSpec) -> float:
    return (grid.spacing / np.sqrt(2.0 * np.pi)) ** grid.dimension


def forward_transform(f: ComplexField) -> SpectralField:
    """
    Forward transform of a field.

    Args:
        f: Field on a grid.

    Returns:
        SpectralField: Coefficients approximating the unitary continuous transform.
    """
    workers = get_config().numerics.fft_workers
    coeffs = scipy.fft.fftn(f.values, workers=workers)
    coeffs *= _transform_scale(f.grid) * _parity(f.grid)
    return SpectralField(f.grid, coeffs, f.time_stamp)


def inverse_transform(F: SpectralField) -> ComplexField:
    """Inverse of ``forward_transform``."""
    workers = get_config().numerics.fft_workers
    values = scipy.fft.ifftn(F.values * _parity(F.grid), workers=workers)
    values /= _transform_scale(F.grid)
    return ComplexField(F.grid, values, F.time_stamp)


Multiplier = Union[complex, np.ndarray, Callable[[FrequencyLattice], np.ndarray]]


def apply_multiplier(F: SpectralField, m: Multiplier) -> SpectralField:
    """
    Pointwise product in frequency space.

    Args:
        F: Spectral field.
        m: Scalar, array broadcastable to the grid shape, or a callable
            receiving the FrequencyLattice and returning such an array,
            e.g. ``lambda lat: np.exp(-1j * lat.k_squared * t)``.

    Returns:
        SpectralField: ``m(k) * F(k)``.

    Raises:
        ValidationError: If the multiplier is not finite on the lattice.
    """
    symbol = m(F.lattice) if callable(m) else m
    symbol = np.asarray(symbol)
    if not np.all(np.isfinite(symbol)):
        raise ValidationError("Multiplier is not finite on the lattice")
    return SpectralField(F.grid, F.values * symbol, F.time_stamp)


def sample_function(grid: GridSpec, f: Callable[..., np.ndarray],
                    time_stamp: Optional[float] = None) -> ComplexField:
    """
    Sample a vectorised closure ``f(x_1, ..., x_d)`` on the grid.

    The closure receives open-mesh coordinate arrays (see ``GridSpec.coordinates``).

    Raises:
        ValidationError: If a sample is not finite; the message names the
            first offending coordinate.
    """
    values = np.broadcast_to(np.asarray(f(*grid.coordinates()), dtype=np.complex128), grid.shape)
    finite = np.isfinite(values)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise ValidationError(f"Non-finite sample at coordinate {grid.coordinate_of(bad)}")
    return ComplexField(grid, values.copy(), time_stamp)


def _pad_axis(arr: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    n = arr.shape[axis]
    half = n // 2
    src = np.moveaxis(arr, axis, 0)
    out = np.zeros((n_new,) + src.shape[1:], dtype=np.complex128)
    out[:half] = src[:half]
    out[n_new - half + 1:] = src[half + 1:]
    # Nyquist row is shared between +n/2 and -n/2
    out[n_new - half] = 0.5 * src[half]
    out[half] = 0.5 * src[half]
    return np.moveaxis(out, 0, axis)


def upsample(f: ComplexField, factor: int = 2) -> ComplexField:
    """
    Zero-padded spectral refinement onto a grid with ``factor`` times the points.

    The trigonometric interpolant is unchanged; values at the original grid
    points are reproduced to roundoff.
    """
    if factor == 1:
        return f
    fine = f.grid.refined(factor)
    coeffs = forward_transform(f).values
    for axis in range(f.grid.dimension):
        coeffs = _pad_axis(coeffs, axis, fine.points_per_axis)
    return inverse_transform(SpectralField(fine, coeffs, f.time_stamp))


def evaluate_trigonometric(f: ComplexField, points: Tuple[np.ndarray, ...]) -> np.ndarray:
    """
    Evaluate the trigonometric interpolant of ``f`` on a tensor grid.

    Args:
        f: Field to interpolate.
        points: One 1-D coordinate array per axis; the result has shape
            ``tuple(len(p) for p in points)``.

    Returns:
        np.ndarray: Interpolated complex values.
    """
    grid = f.grid
    if len(points) != grid.dimension:
        raise GridError(f"Expected {grid.dimension} coordinate axes, got {len(points)}")
    lattice = lattice_for(grid)
    coeffs = scipy.fft.fftn(f.values, workers=get_config().numerics.fft_workers) / grid.size
    m = lattice.indices
    nyquist = m == -(grid.points_per_axis // 2)
    for axis, y in enumerate(points):
        phase = np.outer(np.asarray(y, dtype=float) + grid.half_width, lattice.wavenumbers)
        basis = np.exp(1j * phase)
        # symmetric Nyquist: cos instead of a one-sided exponential
        basis[:, nyquist] = np.cos(phase[:, nyquist])
        coeffs = np.moveaxis(np.tensordot(basis, coeffs, axes=([1], [axis])), 0, axis)
    return coeffs


__all__ = [
    "GridSpec",
    "FrequencyLattice",
    "ComplexField",
    "SpectralField",
    "make_grid",
    "lattice_for",
    "dealias_mask",
    "forward_transform",
    "inverse_transform",
    "apply_multiplier",
    "sample_function",
    "upsample",
    "evaluate_trigonometric",
]
