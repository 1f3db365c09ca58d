import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hartree_lab.diagnostics import scaling_check
from hartree_lab.energy import (
    EnergyBreakdown,
    Family,
    ProblemSpec,
    el_residual,
    energy,
    energy_gradient,
    gn_ratio,
    half_laplacian_form,
    lagrange_multiplier,
    scale_to_rescaled,
)
from hartree_lab.errors import DegenerateFieldError
from hartree_lab.spectral_grid import Field, gaussian_field, inner, make_grid, mass

SCALING_GRID = make_grid(6.0, 16)


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec.limit(0.0)
    with pytest.raises(ValueError):
        ProblemSpec.original(1.0, -2.0)
    with pytest.raises(ValueError):
        ProblemSpec.rescaled(1.0, 0.0)
    assert ProblemSpec.massless().family is Family.MASSLESS
    assert ProblemSpec.original(1.0, 2.5).target_mass == 2.5
    assert ProblemSpec.rescaled(1.0, 4.0).target_mass == 1.0


def test_describe_reports_family_parameters():
    assert ProblemSpec.rescaled(1.0, 8.0).describe() == {"family": "rescaled", "m": 1.0, "c": 8.0, "N": 1.0}
    assert ProblemSpec.massless().describe()["m"] is None


def test_gaussian_kinetic_energy_closed_form(small_grid):
    # int |grad g|^2 / int g^2 = 3/2 for exp(-|x|^2/2); kinetic = (3/2)/(2m) at m = 1/2
    u = gaussian_field(small_grid, target_mass=1.0)
    assert energy(ProblemSpec.limit(0.5), u).kinetic == pytest.approx(1.5, rel=1e-8)


def test_gaussian_hartree_energy_closed_form():
    # unit-mass exp(-|x|^2/2) gives int phi[u^2] u^2 = sqrt(2/pi)
    grid = make_grid(8.0, 64)
    u = gaussian_field(grid, target_mass=1.0)
    assert energy(ProblemSpec.limit(1.0), u).potential == pytest.approx(0.5 * np.sqrt(2.0 / np.pi), rel=1e-6)


def test_breakdown_total():
    breakdown = EnergyBreakdown.from_terms(2.0, 0.5)
    assert breakdown.total == 1.5
    assert breakdown.as_dict() == {"kinetic": 2.0, "potential": 0.5, "total": 1.5}


@settings(max_examples=20, deadline=None)
@given(
    st.integers(min_value=0, max_value=2 ** 32 - 1),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_energy_scaling_identity_on_random_fields(seed, m):
    u = Field(SCALING_GRID, np.random.default_rng(seed).standard_normal(SCALING_GRID.shape))
    for c in (2.0, 5.0, 10.0):
        assert scaling_check(u, m, c) <= 1e-10


def test_scale_to_rescaled_grid_and_mass(small_grid):
    u = gaussian_field(small_grid, target_mass=1.0)
    scaled = scale_to_rescaled(u, 4.0)
    assert scaled.grid.half_width == pytest.approx(small_grid.half_width / 4.0)
    assert scaled.grid.points_per_dim == small_grid.points_per_dim
    # u~ = c^2 u(c x) has mass c * mass(u)
    assert mass(scaled) == pytest.approx(4.0, rel=1e-12)


@pytest.mark.parametrize("spec", [ProblemSpec.limit(2.0), ProblemSpec.rescaled(1.0, 4.0), ProblemSpec.original(1.0, 1.0)],
                         ids=lambda s: s.family.value)
def test_energy_gradient_matches_finite_difference(small_grid, spec):
    u = gaussian_field(small_grid, width=1.2, target_mass=1.0)
    v = gaussian_field(small_grid, center=(0.5, -0.5, 0.0), width=0.9)
    t = 1e-4
    plus = energy(spec, u.with_values(u.values + t * v.values)).total
    minus = energy(spec, u.with_values(u.values - t * v.values)).total
    directional = (plus - minus) / (2.0 * t)
    assert inner(energy_gradient(spec, u), v) == pytest.approx(directional, rel=1e-6)


def test_multiplier_sign_and_residual_at_ground_state(limit_wide):
    spec = limit_wide.spec
    q = limit_wide.state
    mu = lagrange_multiplier(spec, q)
    assert mu < 0
    assert mu == pytest.approx(limit_wide.multiplier, rel=1e-10)
    residual = el_residual(spec, q, -mu)
    assert residual.l2_norm <= 1e-8 * q.l2_norm


def test_el_residual_of_zero_field_raises(small_grid):
    zero = Field(small_grid, np.zeros(small_grid.shape))
    with pytest.raises(DegenerateFieldError):
        el_residual(ProblemSpec.limit(1.0), zero, 0.1)
    with pytest.raises(DegenerateFieldError):
        lagrange_multiplier(ProblemSpec.limit(1.0), zero)
    with pytest.raises(DegenerateFieldError):
        gn_ratio(zero)


def test_half_laplacian_form_is_positive(small_grid):
    assert half_laplacian_form(gaussian_field(small_grid)) > 0


def test_gn_ratio_is_scale_and_amplitude_invariant(small_grid):
    u = gaussian_field(small_grid, width=1.0)
    assert gn_ratio(u.with_values(3.0 * u.values)) == pytest.approx(gn_ratio(u), rel=1e-12)


def test_gn_saturation_at_massless_ground_state(massless_small):
    w = massless_small.state
    assert massless_small.converged
    assert gn_ratio(w) * mass(w) / 2.0 == pytest.approx(1.0, abs=1e-2)


def test_random_fields_stay_below_gn_ratio_of_ground_state(massless_small, rng):
    grid = massless_small.state.grid
    bound = gn_ratio(massless_small.state) * (1.0 + 1e-3)
    for _ in range(10):
        center = rng.uniform(-1.0, 1.0, size=3)
        width = rng.uniform(0.6, 2.5)
        u = gaussian_field(grid, center, width)
        noisy = u.with_values(u.values * (1.0 + 0.2 * rng.standard_normal(grid.shape)))
        assert gn_ratio(u) <= bound
        assert gn_ratio(noisy) <= bound
