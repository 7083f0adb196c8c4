"""
Unit tests for the spectral core: grids, transforms, multipliers and fields.
"""

import math

import numpy as np
import pytest

from nls_decay_lab.exceptions import GridError, ValidationError
from nls_decay_lab.grid import (
    ComplexField,
    SpectralField,
    apply_multiplier,
    dealias_mask,
    evaluate_trigonometric,
    forward_transform,
    inverse_transform,
    lattice_for,
    make_grid,
    sample_function,
    upsample,
)


class TestMakeGrid:
    """Tests for grid construction."""

    def test_spacing_and_shape(self):
        """Test h = 2l/n and the array shape."""
        grid = make_grid(2, 8.0, 32)
        assert grid.spacing == pytest.approx(0.5)
        assert grid.shape == (32, 32)
        assert grid.size == 1024
        assert grid.box_volume == pytest.approx(256.0)

    def test_axis_starts_at_left_edge(self):
        """Test the first coordinate is -l and the last is l - h."""
        grid = make_grid(1, 4.0, 8)
        axis = grid.axis()
        assert axis[0] == -4.0
        assert axis[-1] == pytest.approx(3.0)

    @pytest.mark.parametrize("d, l, n", [(4, 1.0, 8), (2, 1.0, 12), (2, 1.0, 4), (1, 0.0, 8), (1, -2.0, 8)])
    def test_invalid_parameters(self, d, l, n):
        """Test out-of-range dimension, size or width raise GridError."""
        with pytest.raises(GridError):
            make_grid(d, l, n)

    def test_error_lists_every_problem(self):
        """Test all violations are reported together."""
        with pytest.raises(GridError) as info:
            make_grid(5, -1.0, 10)
        message = str(info.value)
        assert "dimension" in message
        assert "points_per_axis" in message
        assert "half_width" in message

    def test_flat_index_round_trip(self):
        """Test coordinate_of and index_of are inverse in C order."""
        grid = make_grid(3, 2.0, 8)
        for flat in (0, 1, 8, 64, 511):
            assert grid.index_of(grid.coordinate_of(flat)) == flat
        # last axis varies fastest
        assert grid.coordinate_of(1) == (-2.0, -2.0, -2.0 + grid.spacing)

    def test_index_of_outside_box(self):
        """Test a coordinate outside the box is rejected."""
        grid = make_grid(1, 2.0, 8)
        with pytest.raises(GridError):
            grid.index_of((2.5,))

    def test_refined_keeps_box(self):
        """Test refinement multiplies the points and keeps the box."""
        grid = make_grid(2, 5.0, 16).refined(2)
        assert grid.points_per_axis == 32
        assert grid.half_width == 5.0


class TestFrequencyLattice:
    """Tests for the dual lattice."""

    def test_fft_order(self):
        """Test mode numbers follow 0, 1, ..., n/2-1, -n/2, ..., -1."""
        lattice = lattice_for(make_grid(1, math.pi, 8))
        assert list(lattice.indices) == [0, 1, 2, 3, -4, -3, -2, -1]
        np.testing.assert_allclose(lattice.wavenumbers, lattice.indices.astype(float))

    def test_dk_and_nyquist(self):
        """Test dk = pi/l and the largest wavenumber (pi/l) n/2."""
        lattice = lattice_for(make_grid(2, 4.0, 16))
        assert lattice.dk == pytest.approx(math.pi / 4.0)
        assert lattice.max_wavenumber == pytest.approx(2.0 * math.pi)

    def test_k_squared_is_cached_and_read_only(self):
        """Test the |k|^2 table is shared and immutable."""
        grid = make_grid(2, 4.0, 16)
        table = lattice_for(grid).k_squared
        assert table is lattice_for(grid).k_squared
        with pytest.raises(ValueError):
            table[0, 0] = 1.0

    def test_index_parity_relates_transform_to_dft(self, grid_2d):
        """Test the forward transform is the scaled DFT times (-1)^(sum m)."""
        parity = lattice_for(grid_2d).index_parity()
        assert parity[0, 0] == 1.0 and parity[1, 0] == -1.0 and parity[1, 1] == 1.0
        f = sample_function(grid_2d, lambda x, y: np.exp(-(x ** 2 + 2.0 * y ** 2)))
        scale = (grid_2d.spacing / math.sqrt(2.0 * math.pi)) ** 2
        np.testing.assert_allclose(forward_transform(f).values, scale * parity * np.fft.fftn(f.values), atol=1e-12)

    def test_dealias_mask_keeps_two_thirds(self):
        """Test modes with |m| <= n/3 on every axis are kept."""
        grid = make_grid(2, 4.0, 48)
        mask = dealias_mask(grid)
        kept_per_axis = 2 * (48 // 3) + 1
        assert mask.sum() == kept_per_axis ** 2
        assert set(np.unique(mask)) == {0.0, 1.0}


class TestTransforms:
    """Tests for the forward and inverse transforms."""

    def test_round_trip(self, grid_2d):
        """Test inverse(forward(f)) reproduces f to roundoff."""
        rng = np.random.default_rng(1)
        f = ComplexField(grid_2d, rng.standard_normal(grid_2d.shape) + 1j * rng.standard_normal(grid_2d.shape))
        back = inverse_transform(forward_transform(f))
        np.testing.assert_allclose(back.values, f.values, atol=1e-12)

    def test_parseval(self, grid_2d):
        """Test sum |f|^2 h^d equals sum |F|^2 dk^d."""
        rng = np.random.default_rng(2)
        f = ComplexField(grid_2d, rng.standard_normal(grid_2d.shape))
        physical = np.sum(np.abs(f.values) ** 2) * grid_2d.volume_element
        assert forward_transform(f).norm() ** 2 == pytest.approx(physical, rel=1e-12)

    def test_gaussian_transform_matches_continuous(self, grid_1d):
        """Test the transform of exp(-x^2/2) is exp(-k^2/2) (unitary convention)."""
        f = sample_function(grid_1d, lambda x: np.exp(-x ** 2 / 2.0))
        F = forward_transform(f)
        k = lattice_for(grid_1d).wavenumbers
        np.testing.assert_allclose(F.values, np.exp(-k ** 2 / 2.0), atol=1e-12)

    def test_time_stamp_is_carried(self, grid_1d):
        """Test the time stamp survives a round trip."""
        f = sample_function(grid_1d, lambda x: np.exp(-x ** 2), 0.25)
        assert forward_transform(f).time_stamp == 0.25
        assert inverse_transform(forward_transform(f)).time_stamp == 0.25

    def test_multiplier_callable_and_scalar(self, grid_1d):
        """Test callables receive the lattice and scalars broadcast."""
        f = sample_function(grid_1d, lambda x: np.exp(-x ** 2))
        F = forward_transform(f)
        doubled = apply_multiplier(F, 2.0)
        np.testing.assert_allclose(doubled.values, 2.0 * F.values)
        identity = apply_multiplier(F, lambda lat: np.ones_like(lat.k_squared))
        np.testing.assert_allclose(identity.values, F.values)

    def test_multiplier_must_be_finite(self, grid_1d):
        """Test a non-finite symbol is rejected."""
        F = forward_transform(sample_function(grid_1d, lambda x: np.exp(-x ** 2)))
        with np.errstate(divide="ignore"):
            with pytest.raises(ValidationError):
                apply_multiplier(F, lambda lat: 1.0 / lat.k_squared)


class TestComplexField:
    """Tests for field arithmetic and validation."""

    def test_flat_values_are_reshaped(self, grid_2d):
        """Test flat C-order input is accepted."""
        values = np.arange(grid_2d.size, dtype=float)
        f = ComplexField(grid_2d, values)
        assert f.values.shape == grid_2d.shape
        assert f.values[0, 1] == 1.0
        np.testing.assert_array_equal(f.flat, values)

    def test_non_finite_rejected_with_coordinate(self, grid_1d):
        """Test NaN input names the offending coordinate."""
        values = np.zeros(grid_1d.shape, dtype=complex)
        values[3] = np.nan
        with pytest.raises(ValidationError) as info:
            ComplexField(grid_1d, values)
        assert str(grid_1d.axis()[3]) in str(info.value)

    def test_grid_mismatch(self):
        """Test adding fields on different grids fails."""
        a = ComplexField.zeros(make_grid(1, 1.0, 8))
        b = ComplexField.zeros(make_grid(1, 2.0, 8))
        with pytest.raises(GridError):
            a + b

    def test_scalar_multiplication_and_conj(self, grid_1d):
        """Test scalar products on both sides and conjugation."""
        f = sample_function(grid_1d, lambda x: np.exp(1j * x))
        np.testing.assert_allclose((2j * f).values, (f * 2j).values)
        np.testing.assert_allclose(f.conj().values, np.exp(-1j * grid_1d.axis()))

    def test_spectral_field_rejects_wrong_shape(self, grid_2d):
        """Test a spectral field must match the grid shape."""
        with pytest.raises(GridError):
            SpectralField(grid_2d, np.zeros((3, 3)))


class TestInterpolation:
    """Tests for spectral upsampling and trigonometric evaluation."""

    def test_upsample_reproduces_grid_values(self, grid_2d):
        """Test the refined field agrees with the original at shared points."""
        f = sample_function(grid_2d, lambda x, y: np.exp(-(x ** 2 + 2 * y ** 2) / 4.0) * np.exp(0.3j * x))
        fine = upsample(f, 2)
        assert fine.grid.points_per_axis == 128
        np.testing.assert_allclose(fine.values[::2, ::2], f.values, atol=1e-12)

    def test_upsample_factor_one_is_identity(self, grid_1d):
        """Test factor 1 returns the field unchanged."""
        f = sample_function(grid_1d, lambda x: np.exp(-x ** 2))
        assert upsample(f, 1) is f

    def test_evaluate_at_grid_points(self, grid_2d):
        """Test evaluation on the grid axes reproduces the samples."""
        f = sample_function(grid_2d, lambda x, y: np.exp(-(x ** 2 + y ** 2) / 8.0))
        axis = grid_2d.axis()
        np.testing.assert_allclose(evaluate_trigonometric(f, (axis, axis)), f.values, atol=1e-12)

    def test_evaluate_between_points(self, grid_1d):
        """Test off-grid evaluation of a resolved Gaussian."""
        f = sample_function(grid_1d, lambda x: np.exp(-x ** 2 / 2.0))
        points = np.array([0.1, -0.37, 1.5])
        values = evaluate_trigonometric(f, (points,))
        np.testing.assert_allclose(values, np.exp(-points ** 2 / 2.0), atol=1e-10)

    def test_evaluate_dimension_mismatch(self, grid_2d):
        """Test the number of coordinate axes must match the dimension."""
        with pytest.raises(GridError):
            evaluate_trigonometric(ComplexField.zeros(grid_2d), (np.zeros(3),))
