"""Identity checks on converged states: Pohozaev identities, decay fits and the c -> infinity study."""
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from hartree_lab.energy import ProblemSpec, energy, scale_to_rescaled
from hartree_lab.errors import HartreeLabError, WindowError
from hartree_lab.operators import MultiplierSymbol, coulomb_values, quadratic_form_values, symbol_on_half_lattice
from hartree_lab.solver import SolveOptions, solve_ground_state, solve_with_retries
from hartree_lab.spectral_grid import (
    Field,
    GridSpec,
    align_to_origin,
    gradient_magnitude,
    mass,
    radial_bins,
)
from hartree_lab.workers import run_parallel

logger = logging.getLogger(__name__)

# largest relative spread allowed between the decay rates of Q_c and |grad Q_c| over a c scan
DECAY_AGREEMENT = 0.1


# -------------------------------------------------
# Report records
# -------------------------------------------------

@dataclass
class IdentityCheck:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual, "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class PohozaevReport:
    term_resolvent: float
    term_mass: float
    term_energy: float
    residual: float
    relative_residual: float

    def check(self, name: str, tolerance: float) -> IdentityCheck:
        return IdentityCheck(name, self.relative_residual, tolerance)


@dataclass
class DecayFit:
    delta: float
    prefactor: float
    window: Tuple[float, float]
    fit_quality: float


@dataclass
class ConvergenceRow:
    c: float
    sup_distance: float
    multiplier_gap: float
    decay_delta: float
    gradient_delta: float = float("nan")
    converged: bool = True
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return asdict(self)


# -------------------------------------------------
# Pohozaev identities
# -------------------------------------------------

def _report(terms: Tuple[float, float, float], residual: float, scale: float) -> PohozaevReport:
    """Relative residual is taken against the terms that survive the rest-energy cancellation."""
    relative = abs(residual) / scale if scale > 0 else abs(residual)
    return PohozaevReport(*terms, residual=residual, relative_residual=relative)


def _resolvent_pairings(q: Field, m: float, c: float) -> Tuple[float, float]:
    """(m^2c^4 <(-c^2 Laplacian + m^2c^4)^{-1/2} Q, Q>, m c^2 sum rel/root |Q_hat|^2 h^3)."""
    grid = q.grid
    rest = m * c * c
    inverse_root = symbol_on_half_lattice(MultiplierSymbol.inverse_root(m, c), grid)
    rel = symbol_on_half_lattice(MultiplierSymbol.relativistic(m, c), grid)
    pairing = quadratic_form_values(grid, inverse_root, q.values)
    # m c^2 (1 - m c^2 / root) = m c^2 rel / (rel + m c^2), free of cancellation
    gap = quadratic_form_values(grid, rest * rel / (rel + rest), q.values)
    return pairing, gap


def _hartree(q: Field) -> float:
    density = q.values * q.values
    return float(np.sum(coulomb_values(q.grid, density) * density) * q.grid.cell_volume)


def pohozaev_check(q: Field, m: float, c: float, energy_value: float) -> PohozaevReport:
    """-m^2c^4 <(-c^2 Laplacian + m^2c^4)^{-1/2} Q, Q> + m c^2 int Q^2 + e(c), which vanishes at Q_c."""
    pairing, gap = _resolvent_pairings(q, m, c)
    terms = (-pairing, m * c * c * mass(q), energy_value)
    return _report(terms, gap + energy_value, max(abs(gap), abs(energy_value)))


def pohozaev_companion_check(q: Field, m: float, c: float, multiplier: float) -> PohozaevReport:
    """-m^2c^4 <(-c^2 Laplacian + m^2c^4)^{-1/2} Q, Q> + (m c^2 + mu) int Q^2 + 1/2 int phi[Q^2] Q^2."""
    pairing, gap = _resolvent_pairings(q, m, c)
    current = mass(q)
    half_hartree = 0.5 * _hartree(q)
    terms = (-pairing, (m * c * c + multiplier) * current, half_hartree)
    return _report(terms, gap + multiplier * current + half_hartree,
                   max(abs(gap), abs(multiplier * current), half_hartree))


def limit_virial_check(q: Field, m: float) -> PohozaevReport:
    """2 int |grad Q|^2/(2m) - 1/2 int phi[Q^2] Q^2, the c -> infinity form of the Pohozaev identity."""
    kinetic = quadratic_form_values(q.grid, symbol_on_half_lattice(MultiplierSymbol.nonrelativistic(m), q.grid),
                                    q.values)
    half_hartree = 0.5 * _hartree(q)
    return _report((2.0 * kinetic, -half_hartree, 0.0), 2.0 * kinetic - half_hartree,
                   max(2.0 * kinetic, half_hartree))


def scaling_check(u: Field, m: float, c: float) -> float:
    """Relative gap between E(u) and c^{-3} E_c(u~) with u~(x) = c^2 u(c x)."""
    original = energy(ProblemSpec.original(m, mass(u)), u).total
    rescaled = energy(ProblemSpec.rescaled(m, c), scale_to_rescaled(u, c)).total / c ** 3
    return abs(original - rescaled) / max(abs(original), np.finfo(float).tiny)


# -------------------------------------------------
# Decay fits
# -------------------------------------------------

def default_window(grid: GridSpec) -> Tuple[float, float]:
    """(L/4, min(2L/3, L - 2)): outside the core, clear of the box faces."""
    L = grid.half_width
    return 0.25 * L, min(2.0 * L / 3.0, L - 2.0)


def coulomb_tail_power(m: float, lam: float, total_mass: float = 1.0) -> float:
    """Exponent p in Q ~ r^p e^{-kappa r}, kappa = sqrt(2 m lambda), left by the -2 m N / r tail of the potential."""
    return m * total_mass / np.sqrt(2.0 * m * lam) - 1.0


def decay_fit(u: Field, window: Optional[Tuple[float, float]] = None, power: float = 0.0) -> DecayFit:
    """Least-squares line through (r, log profile(r) - power log r) on the window; delta = -slope.

    Raises:
        WindowError: for r_min >= r_max, r_max > L - 2, fewer than three shells in the
            window, or nonpositive profile values inside it.
    """
    r_min, r_max = window if window is not None else default_window(u.grid)
    if not 0 <= r_min < r_max <= u.grid.half_width - 2.0:
        raise WindowError(f"window ({r_min}, {r_max}) must satisfy 0 <= r_min < r_max <= L - 2 "
                          f"= {u.grid.half_width - 2.0}", window=(r_min, r_max))
    radii, means, _ = radial_bins(u)
    inside = (radii >= r_min) & (radii <= r_max)
    if np.count_nonzero(inside) < 3:
        raise WindowError(f"window ({r_min}, {r_max}) holds fewer than three shells", window=(r_min, r_max))
    profile = means[inside]
    if np.any(profile <= 0):
        raise WindowError(f"profile is not positive throughout the window ({r_min}, {r_max})",
                          window=(r_min, r_max))
    fit = linregress(radii[inside], np.log(profile) - power * np.log(np.maximum(radii[inside], 1e-12)))
    return DecayFit(delta=-float(fit.slope), prefactor=float(np.exp(fit.intercept)),
                    window=(float(r_min), float(r_max)), fit_quality=float(fit.rvalue ** 2))


def gradient_decay_check(u: Field, window: Optional[Tuple[float, float]] = None, power: float = 0.0) -> DecayFit:
    """decay_fit of |grad u| (spectral gradient)."""
    return decay_fit(gradient_magnitude(u), window, power)


def decay_spread(deltas: Sequence[float]) -> float:
    """(max - min) / min over fitted rates."""
    deltas = np.asarray(deltas, dtype=float)
    return float((deltas.max() - deltas.min()) / deltas.min())


def radial_profile_table(u: Field) -> pd.DataFrame:
    radii, means, _ = radial_bins(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(means > 0, np.log(np.where(means > 0, means, 1.0)), np.nan)
    return pd.DataFrame({"r": radii, "value": means, "log_value": logs})


# -------------------------------------------------
# c -> infinity study
# -------------------------------------------------

def convergence_study(
    m: float,
    c_list: Sequence[float],
    opts: Optional[SolveOptions] = None,
    grid: Optional[GridSpec] = None,
    window: Optional[Tuple[float, float]] = None,
    max_workers: Optional[int] = None,
) -> List[ConvergenceRow]:
    """Compare Q_c with Q_infinity and mu_c with -lambda for each c.

    The limit problem is solved once on the grid; every rescaled solve is
    warm-started from Q_infinity. A failed row is kept with converged False and
    its error message.

    Raises:
        ValueError: unless c_list is strictly ascending with at least three entries.
    """
    c_list = [float(c) for c in c_list]
    if len(c_list) < 3:
        raise ValueError(f"convergence study needs at least three c values, got {len(c_list)}")
    if any(b <= a for a, b in zip(c_list, c_list[1:])):
        raise ValueError(f"c values must be strictly ascending, got {c_list}")
    opts = opts or SolveOptions()
    limit = solve_with_retries(ProblemSpec.limit(m), opts, grid=grid)
    if not limit.converged:
        logger.warning("limit solve did not converge (residual %.3e); rows compare against it anyway",
                       limit.residual_norm)
    lam = -limit.multiplier
    reference = align_to_origin(limit.state)

    def row(c: float) -> ConvergenceRow:
        try:
            result = solve_ground_state(ProblemSpec.rescaled(m, c), opts, init=limit.state)
        except HartreeLabError as e:
            logger.warning("convergence row c=%g failed: %s", c, e)
            return ConvergenceRow(c, np.nan, np.nan, np.nan, converged=False, error=str(e))
        try:
            delta = decay_fit(result.state, window).delta
            gradient_delta = gradient_decay_check(result.state, window).delta
        except WindowError as e:
            logger.warning("decay fit for c=%g failed: %s", c, e)
            delta = gradient_delta = np.nan
        distance = align_to_origin(result.state).sup_distance(reference)
        return ConvergenceRow(c, distance, abs(result.multiplier + lam), delta, gradient_delta,
                              converged=result.converged)

    rows = run_parallel(row, [(c,) for c in c_list], max_workers=max_workers, desc="convergence rows")
    for r in rows:
        logger.info("c=%g sup=%.3e gap=%.3e delta=%.4f grad delta=%.4f%s", r.c, r.sup_distance, r.multiplier_gap,
                    r.decay_delta, r.gradient_delta,
                    "" if r.converged else " (not converged)")
    return rows


def strictly_decreasing(values: Sequence[float]) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(values)) and np.all(np.diff(values) < 0))


def convergence_slope(rows: Sequence[ConvergenceRow]) -> float:
    """Log-log slope of the multiplier gap against c; informational."""
    usable = [(r.c, r.multiplier_gap) for r in rows if np.isfinite(r.multiplier_gap) and r.multiplier_gap > 0]
    if len(usable) < 2:
        return float("nan")
    cs, gaps = zip(*usable)
    slope, _ = np.polyfit(np.log(cs), np.log(gaps), 1)
    return float(slope)


def decay_agreement(rows: Sequence[ConvergenceRow]) -> float:
    """decay_spread over the rates of Q_c and |grad Q_c| in every row; nan if any rate is missing."""
    rates = np.array([rate for r in rows for rate in (r.decay_delta, r.gradient_delta)], dtype=float)
    if rates.size == 0 or not np.all(np.isfinite(rates)) or np.min(rates) <= 0:
        return float("nan")
    return decay_spread(rates)


def convergence_table(rows: Sequence[ConvergenceRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.as_dict() for r in rows])
    return frame[["c", "sup_distance", "multiplier_gap", "decay_delta", "gradient_delta", "converged"]]
