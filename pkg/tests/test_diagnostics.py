import numpy as np
import pytest

from hartree_lab.diagnostics import (
    ConvergenceRow,
    IdentityCheck,
    convergence_slope,
    convergence_study,
    convergence_table,
    coulomb_tail_power,
    decay_agreement,
    decay_fit,
    decay_spread,
    default_window,
    gradient_decay_check,
    limit_virial_check,
    pohozaev_check,
    pohozaev_companion_check,
    radial_profile_table,
    scaling_check,
    strictly_decreasing,
)
from hartree_lab.energy import energy
from hartree_lab.errors import WindowError
from hartree_lab.solver import SolveOptions
from hartree_lab.spectral_grid import Field, gaussian_field

TAIL_WINDOW = (3.0, 8.0)


def test_identity_check_pass_flag():
    assert IdentityCheck("x", 1e-9, 1e-8).passed
    assert not IdentityCheck("x", 1e-7, 1e-8).passed
    assert not IdentityCheck("x", float("nan"), 1.0).passed
    assert IdentityCheck("x", 0.0, 0.0).as_dict() == {"name": "x", "residual": 0.0, "tolerance": 0.0, "pass": True}


def test_pohozaev_identities_at_the_rescaled_ground_state(rescaled_wide):
    spec = rescaled_wide.spec
    q = rescaled_wide.state
    report = pohozaev_check(q, spec.m, spec.c, rescaled_wide.energy.total)
    assert report.relative_residual <= 1e-4
    assert report.check("pohozaev", 1e-4).passed
    companion = pohozaev_companion_check(q, spec.m, spec.c, rescaled_wide.multiplier)
    assert companion.relative_residual <= 1e-4


def test_pohozaev_identities_fail_off_the_ground_state(rescaled_wide):
    spec = rescaled_wide.spec
    u = gaussian_field(rescaled_wide.state.grid, width=0.7, target_mass=1.0)
    report = pohozaev_check(u, spec.m, spec.c, energy(spec, u).total)
    assert report.relative_residual >= 1e-2
    companion = pohozaev_companion_check(u, spec.m, spec.c, -0.3)
    assert companion.relative_residual >= 1e-2


def test_limit_virial(limit_wide):
    assert limit_virial_check(limit_wide.state, limit_wide.spec.m).relative_residual <= 1e-4
    u = gaussian_field(limit_wide.state.grid, width=0.7, target_mass=1.0)
    assert limit_virial_check(u, limit_wide.spec.m).relative_residual >= 0.1


@pytest.mark.parametrize("m", [0.5, 2.0])
def test_scaling_check_on_ground_states(limit_small, m):
    for c in (2.0, 5.0, 10.0):
        assert scaling_check(limit_small.state, m, c) <= 1e-10


def test_default_window_fits_inside_the_box(small_grid, wide_grid):
    for grid in (small_grid, wide_grid):
        r_min, r_max = default_window(grid)
        assert 0 < r_min < r_max <= grid.half_width - 2.0


@pytest.mark.parametrize("window", [(5.0, 3.0), (2.0, 11.0), (2.0, 2.1), (-1.0, 4.0)])
def test_decay_fit_rejects_bad_windows(wide_grid, window):
    with pytest.raises(WindowError):
        decay_fit(gaussian_field(wide_grid, width=3.0), window)


def test_decay_fit_rejects_nonpositive_profiles(wide_grid):
    u = gaussian_field(wide_grid, width=3.0)
    with pytest.raises(WindowError):
        decay_fit(u.with_values(-u.values), TAIL_WINDOW)


def test_decay_fit_recovers_exponential_rate(wide_grid):
    r = wide_grid.radius
    fit = decay_fit(Field(wide_grid, np.exp(-1.5 * r)), (2.0, 8.0))
    assert fit.delta == pytest.approx(1.5, rel=1e-2)
    assert fit.fit_quality > 0.999
    assert fit.window == (2.0, 8.0)


def test_decay_fit_removes_an_algebraic_prefactor(wide_grid):
    r = wide_grid.radius
    u = Field(wide_grid, np.sqrt(r) * np.exp(-r))
    assert decay_fit(u, (2.0, 8.0), power=0.5).delta == pytest.approx(1.0, rel=2e-2)
    assert decay_fit(u, (2.0, 8.0)).delta < 0.95


def test_coulomb_tail_power():
    # kappa = sqrt(2 m lambda) = 1 at m = 1/2, lambda = 1
    assert coulomb_tail_power(0.5, 1.0) == pytest.approx(-0.5)
    assert coulomb_tail_power(2.0, 0.25, total_mass=2.0) == pytest.approx(3.0)


def test_ground_state_decays_at_the_linearized_rate(limit_wide):
    m = limit_wide.spec.m
    lam = -limit_wide.multiplier
    expected = np.sqrt(2.0 * m * lam)
    fit = decay_fit(limit_wide.state, TAIL_WINDOW, power=coulomb_tail_power(m, lam))
    assert fit.delta == pytest.approx(expected, rel=0.05)


def test_gradient_decays_like_the_state(rescaled_wide):
    state = decay_fit(rescaled_wide.state, TAIL_WINDOW).delta
    gradient = gradient_decay_check(rescaled_wide.state, TAIL_WINDOW).delta
    assert abs(gradient - state) / state <= 0.1


def test_decay_spread():
    assert decay_spread([1.0, 1.1, 1.05]) == pytest.approx(0.1)


def test_decay_agreement_pools_state_and_gradient_rates():
    rows = [ConvergenceRow(c, 0.0, 0.0, 1.0, g) for c, g in ((8.0, 1.05), (16.0, 1.02), (32.0, 1.01))]
    assert decay_agreement(rows) == pytest.approx(0.05)
    rows.append(ConvergenceRow(64.0, np.nan, np.nan, np.nan, converged=False, error="boom"))
    assert np.isnan(decay_agreement(rows))


def test_radial_profile_table(small_grid):
    u = gaussian_field(small_grid)
    frame = radial_profile_table(u.with_values(u.values - 0.5))
    assert list(frame.columns) == ["r", "value", "log_value"]
    assert frame["log_value"].isna().any()
    positive = frame["value"] > 0
    assert np.allclose(frame.loc[positive, "log_value"], np.log(frame.loc[positive, "value"]))


def test_strictly_decreasing():
    assert strictly_decreasing([3.0, 2.0, 1.0])
    assert not strictly_decreasing([3.0, 3.0, 1.0])
    assert not strictly_decreasing([3.0, float("nan"), 1.0])


def test_convergence_slope_and_table():
    rows = [ConvergenceRow(c, 1.0 / c ** 2, 2.0 / c ** 2, 1.1) for c in (4.0, 8.0, 16.0)]
    assert convergence_slope(rows) == pytest.approx(-2.0)
    table = convergence_table(rows)
    assert list(table.columns) == ["c", "sup_distance", "multiplier_gap", "decay_delta", "gradient_delta", "converged"]
    failed = rows + [ConvergenceRow(32.0, np.nan, np.nan, np.nan, converged=False, error="boom")]
    assert convergence_slope(failed) == pytest.approx(-2.0)


@pytest.mark.parametrize("c_list", [[4.0, 8.0], [8.0, 4.0, 16.0], [4.0, 4.0, 8.0]])
def test_convergence_study_validates_c_list(c_list):
    with pytest.raises(ValueError):
        convergence_study(2.0, c_list)


@pytest.mark.slow
def test_rescaled_states_approach_the_limit(small_grid):
    rows = convergence_study(2.0, [4.0, 8.0, 16.0], SolveOptions(tolerance=1e-9, max_iterations=4000),
                             grid=small_grid, window=(2.0, 5.0), max_workers=3)
    assert [r.c for r in rows] == [4.0, 8.0, 16.0]
    assert all(r.converged for r in rows)
    assert strictly_decreasing([r.sup_distance for r in rows])
    assert strictly_decreasing([r.multiplier_gap for r in rows])
    assert convergence_slope(rows) < -1.5
