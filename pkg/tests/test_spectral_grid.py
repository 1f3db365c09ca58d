import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from hartree_lab.errors import DegenerateFieldError, SizingError
from hartree_lab.spectral_grid import (
    Field,
    align_to_origin,
    barycenter,
    gaussian_field,
    gradient,
    gradient_magnitude,
    inner,
    make_grid,
    mass,
    normalize,
    radial_asymmetry,
    radial_profile,
    radial_symmetrize,
    shift_field,
    spectral_mass,
)

TINY_GRID = make_grid(4.0, 8)


@pytest.mark.parametrize("n", [4, 12, 48, 100])
def test_make_grid_rejects_bad_sizes(n):
    with pytest.raises(SizingError):
        make_grid(8.0, n)


@given(st.floats(max_value=0.0, allow_nan=False, allow_infinity=False))
def test_make_grid_rejects_nonpositive_half_width(half_width):
    with pytest.raises(SizingError):
        make_grid(half_width, 16)


def test_origin_is_a_grid_point(small_grid, wide_grid):
    for grid in (small_grid, wide_grid):
        assert grid.axis[grid.origin_index] == pytest.approx(0.0, abs=1e-12)
        assert grid.radius[(grid.origin_index,) * 3] == pytest.approx(0.0, abs=1e-12)
        assert grid.spacing == pytest.approx(2.0 * grid.half_width / grid.points_per_dim)


def test_field_rejects_shape_mismatch_and_nonfinite(small_grid):
    with pytest.raises(ValueError):
        Field(small_grid, np.zeros((8, 8, 8)))
    values = np.zeros(small_grid.shape)
    values[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Field(small_grid, values)


def test_field_values_are_read_only(small_grid):
    u = gaussian_field(small_grid)
    with pytest.raises(ValueError):
        u.values[0, 0, 0] = 1.0


def test_gaussian_mass_matches_closed_form(small_grid):
    # int exp(-|x|^2) = pi^{3/2}
    u = gaussian_field(small_grid)
    assert mass(u) == pytest.approx(np.pi ** 1.5, rel=1e-10)


def test_parseval(small_grid, rng):
    u = Field(small_grid, rng.standard_normal(small_grid.shape))
    assert spectral_mass(u) == pytest.approx(mass(u), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e3))
def test_normalize_hits_target_mass(target):
    u = gaussian_field(TINY_GRID, width=0.8)
    assert mass(normalize(u, target)) == pytest.approx(target, rel=1e-12)


def test_normalize_zero_field_raises(small_grid):
    with pytest.raises(DegenerateFieldError):
        normalize(Field(small_grid, np.zeros(small_grid.shape)), 1.0)


def test_inner_is_mass_on_the_diagonal(small_grid):
    u = gaussian_field(small_grid, width=1.3)
    assert inner(u, u) == pytest.approx(mass(u), rel=1e-14)


def test_spectral_gradient_of_gaussian(small_grid):
    u = gaussian_field(small_grid)
    x, y, z = small_grid.coordinates
    exact = np.exp(-(x * x + y * y + z * z) / 2.0)
    gx, gy, gz = gradient(u)
    assert_allclose(gx.values, -x * exact, atol=1e-7)
    assert_allclose(gz.values, -z * exact, atol=1e-7)
    assert_allclose(gradient_magnitude(u).values, small_grid.radius * exact, atol=1e-7)


def test_radial_symmetrize_is_a_projection(small_grid, rng):
    u = Field(small_grid, rng.standard_normal(small_grid.shape))
    once = radial_symmetrize(u)
    twice = radial_symmetrize(once)
    assert_allclose(twice.values, once.values, atol=1e-13)
    # orthogonal: <u - Su, Su> = 0
    residue = u.with_values(u.values - once.values)
    assert abs(inner(residue, once)) <= 1e-10 * mass(u)


def test_centered_gaussian_is_radial(small_grid):
    u = gaussian_field(small_grid, width=1.5)
    assert radial_asymmetry(u) <= 1e-14
    assert_allclose(radial_symmetrize(u).values, u.values, atol=1e-14)


def test_radial_profile_rows(small_grid):
    u = gaussian_field(small_grid)
    rows = radial_profile(u)
    radii = [r for r, _, _ in rows]
    assert radii == sorted(radii)
    r0, v0, _ = rows[0]
    assert r0 < 1.0 and v0 > 0.5
    means = [v for _, v, _ in rows[:6]]
    assert all(a > b for a, b in zip(means, means[1:]))
    assert all(d >= 0.0 for _, _, d in rows)


def test_radial_profile_rejects_narrow_bins(small_grid):
    with pytest.raises(ValueError):
        radial_profile(gaussian_field(small_grid), bin_width=0.5 * small_grid.spacing)


def test_align_to_origin_undoes_whole_cell_rolls(small_grid):
    u = gaussian_field(small_grid, width=1.2)
    moved = u.with_values(np.roll(u.values, (3, -2, 1), axis=(0, 1, 2)))
    assert_allclose(barycenter(moved), [3 * small_grid.spacing, -2 * small_grid.spacing, small_grid.spacing],
                    atol=1e-9)
    assert align_to_origin(moved).sup_distance(u) == 0.0


def test_shift_field_by_whole_cells_matches_roll(small_grid):
    u = gaussian_field(small_grid, center=(0.5, 0.0, -1.0))
    h = small_grid.spacing
    shifted = shift_field(u, (2 * h, 0.0, -h))
    rolled = np.roll(u.values, (2, 0, -1), axis=(0, 1, 2))
    assert_allclose(shifted.values, rolled, atol=1e-12)


def test_barycenter_of_zero_field_raises(small_grid):
    with pytest.raises(DegenerateFieldError):
        barycenter(Field(small_grid, np.zeros(small_grid.shape)))
