"""Constrained ground states by preconditioned projected gradient flow.

The flow is u <- normalize(u - step * P r) where r = T u - phi[u^2] u - mu u is
the gradient projected onto the tangent space of the mass sphere and P is the
multiplier (|k|^2/(2m) + shift)^{-1}. The massless equation has no constraint
and is solved by a Petviashvili fixed-point iteration instead.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tenacity import Retrying, before_sleep_log, retry_if_result, stop_after_attempt
from tqdm import tqdm

from hartree_lab.energy import EnergyBreakdown, Family, ProblemSpec, evaluate_state
from hartree_lab.errors import CollapseError, DegenerateFieldError
from hartree_lab.operators import MultiplierSymbol, coulomb_values, symbol_on_half_lattice
from hartree_lab.spectral_grid import (
    DEFAULT_HALF_WIDTH,
    DEFAULT_POINTS_PER_DIM,
    Field,
    GridSpec,
    align_to_origin,
    apply_symbol_values,
    barycenter,
    gaussian_field,
    make_grid,
    mass,
    radial_asymmetry,
    radial_symmetrize,
    real_forward,
    spectral_gradient,
)
from hartree_lab.workers import run_parallel

logger = logging.getLogger(__name__)


class SolveOptions:
    def __init__(
        self,
        max_iterations: int = 3000,
        step: float = 0.9,
        tolerance: float = 1e-8,
        preconditioner_shift: Optional[float] = None,  # None: running |mu|
        seed: int = 0,
        symmetrize: bool = False,
        shift_update_every: int = 20,
        symmetrize_every: int = 50,
        min_step: float = 1e-6,
        amplitude_factor: float = 1e6,
        energy_floor: float = -1e6,
        resolution_fraction: float = 1e-2,
        log_every: int = 100,
        progress: bool = False,
        fix_translations: bool = True,
    ):
        if not 0 < tolerance <= 1e-2:
            raise ValueError(f"tolerance must lie in (0, 1e-2], got {tolerance}")
        if not step > 0:
            raise ValueError(f"step must be positive, got {step}")
        if preconditioner_shift is not None and not preconditioner_shift > 0:
            raise ValueError(f"preconditioner_shift must be positive, got {preconditioner_shift}")
        self.max_iterations = int(max_iterations)
        self.step = step
        self.tolerance = tolerance
        self.preconditioner_shift = preconditioner_shift
        self.seed = seed
        self.symmetrize = symmetrize
        self.shift_update_every = shift_update_every
        self.symmetrize_every = symmetrize_every
        self.min_step = min_step
        self.amplitude_factor = amplitude_factor
        self.energy_floor = energy_floor
        self.resolution_fraction = resolution_fraction
        self.log_every = log_every
        self.progress = progress
        self.fix_translations = fix_translations

    def copy(self, **overrides) -> "SolveOptions":
        values = dict(vars(self))
        values.update(overrides)
        return SolveOptions(**values)


@dataclass
class GroundStateResult:
    state: Field
    energy: EnergyBreakdown
    multiplier: float
    residual_norm: float
    iterations: int
    converged: bool
    trace: List[Tuple[float, float]] = field(default_factory=list)
    spec: Optional[ProblemSpec] = None

    @property
    def mass(self) -> float:
        return mass(self.state)

    @property
    def min_value(self) -> float:
        return float(np.min(self.state.values))

    @property
    def is_positive(self) -> bool:
        return self.min_value > 0.0

    @property
    def radial_deviation(self) -> float:
        """Within-shell deviation inside r <= L/2, relative to the peak."""
        return radial_asymmetry(self.state) / self.state.peak

    def sidecar(self) -> dict:
        payload = self.spec.describe() if self.spec is not None else {}
        payload.update({
            "energy": self.energy.total,
            "multiplier": self.multiplier,
            "residual": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        })
        return payload


@dataclass
class UniquenessReport:
    runs: List[GroundStateResult]
    pairwise_distance: float
    multiplier_spread: float
    inconclusive: bool


def _high_frequency_fraction(grid: GridSpec, values: np.ndarray) -> float:
    coeffs = real_forward(values)
    power = coeffs.real ** 2 + coeffs.imag ** 2
    power[..., 1:-1] *= 2.0
    outer = grid.rk_norm > (2.0 / 3.0) * grid.k_max
    total = float(np.sum(power))
    return float(np.sum(power[outer])) / total if total > 0 else 0.0


def _check_collapse(spec: ProblemSpec, opts: SolveOptions, grid: GridSpec, values: np.ndarray,
                    total_energy: float, initial_peak: float, initial_fraction: float, iteration: int):
    reason = None
    peak = float(np.max(np.abs(values)))
    if peak > opts.amplitude_factor * initial_peak:
        reason = f"peak amplitude grew to {peak:.3e} (initial {initial_peak:.3e})"
    elif total_energy < opts.energy_floor:
        reason = f"energy {total_energy:.3e} fell below the floor {opts.energy_floor:.3e}"
    elif spec.family is Family.ORIGINAL:
        # the other families are bounded below at their masses
        fraction = _high_frequency_fraction(grid, values)
        if fraction > max(opts.resolution_fraction, 2.0 * initial_fraction):
            reason = f"{fraction:.2%} of the mass left the resolved band (start {initial_fraction:.2%})"
    if reason is not None:
        logger.warning("collapse in %s family at mass %g: %s", spec.family.value, spec.target_mass, reason)
        raise CollapseError(
            f"flow collapsed for the {spec.family.value} family at mass {spec.target_mass:g} "
            f"(iteration {iteration}): {reason}; the mass is likely supercritical",
            family=spec.family.value, mass=spec.target_mass, iteration=iteration, reason=reason,
        )


def _resolve_grid(init: Optional[Field], grid: Optional[GridSpec]) -> GridSpec:
    if init is not None:
        return init.grid
    return grid if grid is not None else make_grid(DEFAULT_HALF_WIDTH, DEFAULT_POINTS_PER_DIM)


def _lattice_offset(start: Field) -> Tuple[int, int, int]:
    return tuple(int(s) for s in np.rint(barycenter(start) / start.grid.spacing))


def _drop_translations(grid: GridSpec, u: np.ndarray, vector: np.ndarray,
                       metric: Optional[np.ndarray] = None) -> np.ndarray:
    """vector minus its orthogonal projection onto span{d_i u} in the metric <., M .>.

    M is a half-lattice multiplier (identity when None). With M = P^{-1} and vector = P r
    the result is still a descent direction.
    """
    modes = spectral_gradient(grid, u)
    weighted = modes if metric is None else tuple(apply_symbol_values(grid, metric, m) for m in modes)
    gram = np.array([[float(np.sum(a * b)) for b in modes] for a in weighted])
    rhs = np.array([float(np.sum(a * vector)) for a in weighted])
    beta = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return vector - sum(b * m for b, m in zip(beta, modes))


def solve_ground_state(
    spec: ProblemSpec,
    opts: Optional[SolveOptions] = None,
    init: Optional[Field] = None,
    grid: Optional[GridSpec] = None,
) -> GroundStateResult:
    """Minimize the family's energy on the mass sphere.

    The flow runs in the frame where the start's barycenter sits on the origin sample
    and the state is rolled back by the same whole cells at the end. Steps carry no
    component along the translation modes d_i u (unless opts.fix_translations is off).

    Args:
        spec: problem family and parameters.
        opts: flow options; defaults to SolveOptions().
        init: starting field (its grid is used); defaults to exp(-|x|^2/2).
        grid: grid for the default start when init is None.

    Returns:
        GroundStateResult; converged is False when max_iterations ran out or the
        step could not be reduced further.

    Raises:
        CollapseError: when the flow runs away (amplitude, energy floor or loss of resolution).
        DegenerateFieldError: for a zero initial field.
    """
    if spec.family is Family.MASSLESS:
        return solve_massless(opts, init=init, grid=grid)
    opts = opts or SolveOptions()
    grid = _resolve_grid(init, grid)
    target = spec.target_mass
    h3 = grid.cell_volume
    start = init if init is not None else gaussian_field(grid)
    if not mass(start) > 0:
        raise DegenerateFieldError("initial field has zero mass", mass=0.0)
    offset = _lattice_offset(start)
    u = align_to_origin(start).values * np.sqrt(target / mass(start))
    initial_peak = float(np.max(np.abs(u)))
    initial_fraction = _high_frequency_fraction(grid, u)

    terms = evaluate_state(spec, grid, u)
    total = terms.kinetic - terms.potential
    shift = opts.preconditioner_shift
    trace = []
    converged = False
    stalled = False
    iterations = 0
    residual = np.inf
    mu = 0.0
    rk2 = grid.rk_norm ** 2 / (2.0 * spec.m)

    with tqdm(total=opts.max_iterations, desc=f"{spec.family.value} flow", disable=not opts.progress) as bar:
        while True:
            hu = terms.kinetic_values - terms.potential_values * u
            mu = float(np.sum(hu * u) * h3) / terms.mass
            gradient = hu - mu * u
            residual = float(np.sqrt(np.sum(gradient * gradient) / np.sum(u * u)))
            trace.append((total, residual))
            if iterations % opts.log_every == 0:
                logger.debug("%s it=%d E=%.12e mu=%.10e res=%.3e", spec.family.value, iterations, total, mu, residual)
            if residual <= opts.tolerance:
                converged = True
                break
            if iterations >= opts.max_iterations or stalled:
                break
            _check_collapse(spec, opts, grid, u, total, initial_peak, initial_fraction, iterations)

            if opts.preconditioner_shift is None and iterations % opts.shift_update_every == 0:
                shift = max(abs(mu), 1e-3)
            direction = apply_symbol_values(grid, 1.0 / (rk2 + shift), gradient)
            if opts.fix_translations:
                direction = _drop_translations(grid, u, direction, metric=rk2 + shift)

            step = opts.step
            slack = 1e-12 * max(1.0, abs(total))
            while True:
                trial = u - step * direction
                trial *= np.sqrt(target / (float(np.sum(trial * trial)) * h3))
                trial_terms = evaluate_state(spec, grid, trial)
                trial_total = trial_terms.kinetic - trial_terms.potential
                if trial_total <= total + slack:
                    break
                step *= 0.5
                if step < opts.min_step:
                    stalled = True
                    break
            if stalled:
                logger.warning("%s flow stalled at iteration %d (residual %.3e)", spec.family.value, iterations, residual)
                continue

            u, terms, total = trial, trial_terms, trial_total
            iterations += 1
            bar.update(1)
            bar.set_postfix(residual=f"{residual:.2e}")

            if opts.symmetrize and iterations % opts.symmetrize_every == 0:
                u = radial_symmetrize(Field(grid, u)).values.copy()
                u *= np.sqrt(target / (float(np.sum(u * u)) * h3))
                terms = evaluate_state(spec, grid, u)
                total = terms.kinetic - terms.potential

    if not converged:
        logger.warning("%s flow did not converge in %d iterations (residual %.3e)",
                       spec.family.value, iterations, residual)
    return GroundStateResult(
        state=Field(grid, np.roll(u, offset, axis=(0, 1, 2)), label=f"{spec.family.value} ground state"),
        energy=EnergyBreakdown.from_terms(terms.kinetic, terms.potential),
        multiplier=mu,
        residual_norm=residual,
        iterations=iterations,
        converged=converged,
        trace=trace,
        spec=spec,
    )


def solve_with_retries(
    spec: ProblemSpec,
    opts: Optional[SolveOptions] = None,
    init: Optional[Field] = None,
    grid: Optional[GridSpec] = None,
    attempts: int = 3,
) -> GroundStateResult:
    """solve_ground_state, retried with a halved step while the result is unconverged.

    Collapse errors are not retried. The last result is returned when every attempt fails.
    """
    opts = opts or SolveOptions()
    result = None
    for attempt in Retrying(
        stop=stop_after_attempt(attempts),
        retry=retry_if_result(lambda r: not r.converged),
        before_sleep=before_sleep_log(logger, logging.INFO),
        retry_error_callback=lambda state: state.outcome.result(),
    ):
        with attempt:
            number = attempt.retry_state.attempt_number
            result = solve_ground_state(spec, opts.copy(step=opts.step / 2 ** (number - 1)), init, grid)
        if not attempt.retry_state.outcome.failed:
            attempt.retry_state.set_result(result)
    return result


def solve_massless(
    opts: Optional[SolveOptions] = None,
    init: Optional[Field] = None,
    grid: Optional[GridSpec] = None,
) -> GroundStateResult:
    """Solve sqrt(-Laplacian) w + w = phi[w^2] w by Petviashvili iteration.

    Each step is w <- S^{3/2} (|k| + 1)^{-1} phi[w^2] w with
    S = <(|k|+1) w, w> / <phi[w^2] w, w>; S -> 1 at the solution. The multiplier
    is -1 by the equation, and the result reports ||w||^2.
    Updates are stripped of their d_i w components, as in solve_ground_state.

    Raises:
        DegenerateFieldError: for a zero initial field.
    """
    opts = opts or SolveOptions()
    grid = _resolve_grid(init, grid)
    spec = ProblemSpec.massless()
    h3 = grid.cell_volume
    start = init if init is not None else gaussian_field(grid, target_mass=3.0)
    if not mass(start) > 0:
        raise DegenerateFieldError("zero initial field is a trivial solution of the massless equation", mass=0.0)
    offset = _lattice_offset(start)
    w = align_to_origin(start).values.copy()
    linear = symbol_on_half_lattice(MultiplierSymbol.massless(), grid) + 1.0
    trace = []
    converged = False
    residual = np.inf
    iterations = 0
    kinetic = potential = 0.0

    with tqdm(total=opts.max_iterations, desc="massless fixed point", disable=not opts.progress) as bar:
        while True:
            density = w * w
            nonlinear = coulomb_values(grid, density) * w
            linear_w = apply_symbol_values(grid, linear, w)
            norm2 = float(np.sum(density))
            kinetic = float(np.sum(linear_w * w)) * h3 - norm2 * h3
            potential = 0.5 * float(np.sum(nonlinear * w)) * h3
            defect = linear_w - nonlinear
            residual = float(np.sqrt(np.sum(defect * defect) / norm2))
            trace.append((kinetic - potential, residual))
            if iterations % opts.log_every == 0:
                logger.debug("massless it=%d mass=%.10e res=%.3e", iterations, norm2 * h3, residual)
            if residual <= opts.tolerance:
                converged = True
                break
            if iterations >= opts.max_iterations:
                break
            stabilizer = float(np.sum(linear_w * w)) / float(np.sum(nonlinear * w))
            update = stabilizer ** 1.5 * apply_symbol_values(grid, 1.0 / linear, nonlinear) - w
            if opts.fix_translations:
                update = _drop_translations(grid, w, update)
            w = w + update
            iterations += 1
            bar.update(1)

    if not converged:
        logger.warning("massless iteration did not converge in %d iterations (residual %.3e)", iterations, residual)
    return GroundStateResult(
        state=Field(grid, np.roll(w, offset, axis=(0, 1, 2)), label="massless ground state"),
        energy=EnergyBreakdown.from_terms(kinetic, potential),
        multiplier=-1.0,
        residual_norm=residual,
        iterations=iterations,
        converged=converged,
        trace=trace,
        spec=spec,
    )


@dataclass
class CriticalMassEstimate:
    estimate: float
    error_bar: float
    coarse: GroundStateResult
    fine: GroundStateResult

    @property
    def converged(self) -> bool:
        return self.coarse.converged and self.fine.converged

    @property
    def relative_spread(self) -> float:
        return self.error_bar / self.estimate


def critical_mass_estimate(
    opts: Optional[SolveOptions] = None,
    grids: Optional[Tuple[GridSpec, GridSpec]] = None,
    max_workers: Optional[int] = None,
) -> CriticalMassEstimate:
    """N* = ||w||^2 from the massless solve on a fine grid, with a two-grid error bar.

    No mass parameter enters: the massless problem has none.
    """
    opts = opts or SolveOptions()
    coarse_grid, fine_grid = grids or (make_grid(16.0, 64), make_grid(16.0, 128))
    coarse, fine = run_parallel(
        lambda g: solve_massless(opts, grid=g),
        [(coarse_grid,), (fine_grid,)],
        max_workers=max_workers,
        desc="critical mass grids",
    )
    estimate = fine.mass
    error_bar = abs(fine.mass - coarse.mass)
    logger.info("critical mass estimate %.8f +- %.2e (n=%d vs n=%d)", estimate, error_bar,
                coarse_grid.points_per_dim, fine_grid.points_per_dim)
    return CriticalMassEstimate(estimate, error_bar, coarse, fine)


def critical_mass_bracket(
    estimate: float,
    m: float,
    grid: GridSpec,
    opts: Optional[SolveOptions] = None,
    below: float = 0.5,
    above: float = 1.1,
) -> dict:
    """Original-family solves at below*N* (expected to converge) and above*N* (expected to collapse)."""
    opts = opts or SolveOptions()
    outcome = {"below_factor": below, "above_factor": above}
    try:
        result = solve_ground_state(ProblemSpec.original(m, below * estimate), opts, grid=grid)
        outcome["below_converged"] = result.converged
    except CollapseError:
        outcome["below_converged"] = False
    try:
        result = solve_ground_state(ProblemSpec.original(m, above * estimate), opts, grid=grid)
        outcome["above_collapsed"] = False
    except CollapseError as e:
        outcome["above_collapsed"] = True
        outcome["above_reason"] = e.reason
    return outcome


def _random_starts(spec: ProblemSpec, grid: GridSpec, n_runs: int, seed: int) -> List[Field]:
    rng = np.random.default_rng(seed)
    quarter = 0.25 * grid.half_width
    # narrower starts would already put more than 1% of the mass in the unresolved band
    narrowest = max(0.5, 2.0 * grid.spacing)
    starts = []
    for run in range(n_runs):
        center = rng.uniform(-quarter, quarter, size=3)
        # centres on grid points keep each run symmetric about a lattice site
        center = np.rint(center / grid.spacing) * grid.spacing
        width = rng.uniform(narrowest, max(2.0, narrowest))
        starts.append(gaussian_field(grid, center, width, spec.target_mass, label=f"start {run}"))
    return starts


def multistart_uniqueness(
    spec: ProblemSpec,
    n_runs: int,
    opts: Optional[SolveOptions] = None,
    grid: Optional[GridSpec] = None,
    max_workers: Optional[int] = None,
) -> UniquenessReport:
    """Solve from n_runs random positive starts and compare the aligned minimizers.

    Raises:
        ValueError: for n_runs < 2.
        CollapseError: when any run collapses.
    """
    if n_runs < 2:
        raise ValueError(f"multistart needs at least two runs, got {n_runs}")
    opts = opts or SolveOptions()
    grid = grid or make_grid(DEFAULT_HALF_WIDTH, DEFAULT_POINTS_PER_DIM)
    starts = _random_starts(spec, grid, n_runs, opts.seed)
    runs = run_parallel(
        lambda start: solve_ground_state(spec, opts, init=start),
        [(start,) for start in starts],
        max_workers=max_workers,
        desc="multistart",
    )
    aligned = [align_to_origin(run.state) for run in runs]
    distance = 0.0
    for i in range(n_runs):
        for j in range(i + 1, n_runs):
            distance = max(distance, aligned[i].sup_distance(aligned[j]))
    multipliers = [run.multiplier for run in runs]
    spread = float(max(multipliers) - min(multipliers))
    inconclusive = not all(run.converged for run in runs)
    logger.info("multistart %s: %d runs, distance %.3e, multiplier spread %.3e%s", spec.family.value,
                n_runs, distance, spread, " (inconclusive)" if inconclusive else "")
    return UniquenessReport(runs, distance, spread, inconclusive)
