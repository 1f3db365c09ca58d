"""Command-line front door: ``python -m hartree_lab.cli {solve,verify,scan} ...``.

Exit codes: 0 ok, 1 invalid configuration, state file or fit window, 2 collapse,
3 non-convergence, 4 a checked contract failed.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from hartree_lab.config import RunConfig
from hartree_lab.diagnostics import (
    DECAY_AGREEMENT,
    IdentityCheck,
    convergence_slope,
    convergence_study,
    convergence_table,
    coulomb_tail_power,
    decay_agreement,
    decay_fit,
    gradient_decay_check,
    limit_virial_check,
    pohozaev_check,
    pohozaev_companion_check,
    radial_profile_table,
    scaling_check,
    strictly_decreasing,
)
from hartree_lab.energy import Family, ProblemSpec, el_residual, energy, gn_ratio, lagrange_multiplier
from hartree_lab.errors import CollapseError, ConfigError, StateFileError, WindowError
from hartree_lab.greens import (
    allowed_rate,
    default_radii,
    green_decay_fit,
    green_table,
    short_range_bound,
    verify_decay_bound,
)
from hartree_lab.io import Manifest, load_state, save_result, write_csv, write_gnuplot_script, write_json
from hartree_lab.linearized import LinearizedContext, kernel_probe, lemma31_residual
from hartree_lab.solver import (
    GroundStateResult,
    SolveOptions,
    critical_mass_bracket,
    critical_mass_estimate,
    multistart_uniqueness,
    solve_ground_state,
)
from hartree_lab.spectral_grid import Field, make_grid, mass

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_COLLAPSE = 2
EXIT_NOT_CONVERGED = 3
EXIT_CONTRACT = 4

SCAN_KINDS = ("convergence", "uniqueness", "critical-mass", "decay-bound")

# report keys; downstream tooling reads them by name
CHECK_SCALING = "scaling_G2.1"
CHECK_DILATION = "lemma_3.1"
CHECK_KERNEL = "kernel_eq1.12"
CHECK_DECAY = "decay_lemma_2.1"
CHECK_POHOZAEV = "pohozaev_eq2.07"
CHECK_GN = "gn_saturation"
CHECK_GREEN = "green_lemma_2.3"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat JSON/YAML configuration file; flags override its values.")
    common.add_argument("--family", choices=["original", "rescaled", "limit", "massless"])
    common.add_argument("--m", type=float, help="Particle mass m.")
    common.add_argument("--c", help="Speed of light c, or a comma-separated list for scans.")
    common.add_argument("--N", type=float, help="Mass constraint of the original family.")
    common.add_argument("--L", type=float, help="Box half-width.")
    common.add_argument("--n", type=int, help="Points per dimension (power of two).")
    common.add_argument("--tol", type=float, help="Relative residual tolerance.")
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--step", type=float)
    common.add_argument("--shift", type=float, help="Fixed preconditioner shift (default: running |mu|).")
    common.add_argument("--seed", type=int)
    common.add_argument("--symmetrize", action="store_true", default=None)
    common.add_argument("--runs", type=int, help="Multistart runs.")
    common.add_argument("--lambda-c", dest="lambda_c", type=float, help="Resolvent shift.")
    common.add_argument("--delta", type=float, help="Tested decay exponent.")
    common.add_argument("--critical-L", dest="critical_L", type=float)
    common.add_argument("--coarse-n", dest="coarse_n", type=int)
    common.add_argument("--fine-n", dest="fine_n", type=int)
    common.add_argument("--bracket", action="store_true", default=None,
                        help="Also run original-family solves at 0.5 and 1.1 times the estimate.")
    common.add_argument("--state", help="Snapshot (.fld) to verify.")
    common.add_argument("--solve-inline", dest="solve_inline", action="store_true", default=None)
    common.add_argument("--kernel-eigs", dest="kernel_eigs", type=int)
    common.add_argument("--out", help="Output directory.")
    common.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="hartree_lab", description="Pseudo-relativistic Hartree ground states.")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="Solve one ground state.")
    commands.add_parser("verify", parents=[common], help="Check identities on a solved state.")
    scan = commands.add_parser("scan", parents=[common], help="Parameter scans.")
    scan.add_argument("kind", choices=SCAN_KINDS)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {key: value for key, value in vars(args).items()
                 if key in RunConfig.DEFAULTS and value is not None}
    return RunConfig.from_sources(args.config, overrides).validate()


def solve_options(cfg: RunConfig, progress: bool = True) -> SolveOptions:
    return SolveOptions(
        max_iterations=cfg.max_iter,
        step=cfg.step,
        tolerance=cfg.tol,
        preconditioner_shift=cfg.shift,
        seed=cfg.seed,
        symmetrize=cfg.symmetrize,
        progress=progress,
    )


def problem_spec(cfg: RunConfig, c: Optional[float] = None) -> ProblemSpec:
    family = Family(cfg.family)
    if family is Family.ORIGINAL:
        return ProblemSpec.original(cfg.m, cfg.N)
    if family is Family.RESCALED:
        return ProblemSpec.rescaled(cfg.m, cfg.c_value if c is None else c)
    if family is Family.LIMIT:
        return ProblemSpec.limit(cfg.m)
    return ProblemSpec.massless()


def _print_result(result: GroundStateResult):
    print(f"  energy     : {result.energy.total:.12e}")
    print(f"  multiplier : {result.multiplier:.12e}")
    print(f"  residual   : {result.residual_norm:.3e} after {result.iterations} iterations")
    print(f"  converged  : {result.converged}")


def _write_profile(u: Field, out_dir: str, stem: str, manifest: Manifest):
    csv_path = write_csv(radial_profile_table(u), os.path.join(out_dir, f"{stem}_profile.csv"))
    manifest.add(csv_path, "radial-profile")
    script = write_gnuplot_script(os.path.join(out_dir, f"{stem}_profile.gp"), csv_path, (1, 2),
                                  "r", "Q(r)", f"{stem} radial profile", logscale_y=True)
    manifest.add(script, "gnuplot")


# -------------------------------------------------
# solve
# -------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    spec = problem_spec(cfg)
    grid = make_grid(cfg.L, cfg.n)
    manifest = Manifest(cfg.out, cfg.config_hash())
    print(f"Solving {spec.family.value} ground state on L={cfg.L:g}, n={cfg.n}")
    result = solve_ground_state(spec, solve_options(cfg), grid=grid)
    stem = f"{spec.family.value}_ground_state"
    field_path, json_path = save_result(result, cfg.out, stem)
    manifest.add(field_path, "state")
    manifest.add(json_path, "sidecar")
    _write_profile(result.state, cfg.out, stem, manifest)
    manifest.write()
    _print_result(result)
    print(f"  state      : {field_path}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# -------------------------------------------------
# verify
# -------------------------------------------------

def _spec_from_sidecar(sidecar: dict) -> ProblemSpec:
    family = Family(sidecar["family"])
    if family is Family.ORIGINAL:
        return ProblemSpec.original(sidecar["m"], sidecar["N"])
    if family is Family.RESCALED:
        return ProblemSpec.rescaled(sidecar["m"], sidecar["c"])
    if family is Family.LIMIT:
        return ProblemSpec.limit(sidecar["m"])
    return ProblemSpec.massless()


def _state_for_verify(cfg: RunConfig):
    if cfg.state:
        state, sidecar = load_state(cfg.state)
        try:
            spec = _spec_from_sidecar(sidecar)
        except (KeyError, TypeError, ValueError) as e:
            raise StateFileError(f"sidecar for {cfg.state} is incomplete: {e}", path=cfg.state)
        breakdown = energy(spec, state)
        if spec.family is Family.MASSLESS:
            multiplier = -1.0
        else:
            multiplier = lagrange_multiplier(spec, state)
        return GroundStateResult(state, breakdown, multiplier, float("nan"), 0, bool(sidecar.get("converged")),
                                 spec=spec)
    if cfg.solve_inline:
        result = solve_ground_state(problem_spec(cfg), solve_options(cfg), grid=make_grid(cfg.L, cfg.n))
        return result
    raise ConfigError("verify needs --state <file>.fld or --solve-inline")


def _el_check(result: GroundStateResult, tolerance: float) -> IdentityCheck:
    spec = result.spec
    u = result.state
    if spec.family is Family.MASSLESS:
        # massless equation: sqrt(-Laplacian) w + w - phi[w^2] w
        residual = el_residual(spec, u, 1.0)
    else:
        residual = el_residual(spec, u, -result.multiplier)
    return IdentityCheck("el_residual", float(residual.l2_norm / u.l2_norm), tolerance)


def verification_checks(result: GroundStateResult, cfg: RunConfig) -> List[IdentityCheck]:
    spec = result.spec
    u = result.state
    checks = [_el_check(result, max(10.0 * cfg.tol, 1e-8))]
    scaling_m = spec.m if spec.family is not Family.MASSLESS else 1.0
    scaling = max(scaling_check(u, scaling_m, c) for c in (2.0, 5.0, 10.0))
    checks.append(IdentityCheck(CHECK_SCALING, scaling, 1e-10))

    if spec.family is Family.LIMIT:
        lam = -result.multiplier
        ctx = LinearizedContext.limit(u, lam, spec.m)
        checks.append(IdentityCheck(CHECK_DILATION, lemma31_residual(ctx), 1e-4))
        checks.append(limit_virial_check(u, spec.m).check("limit_virial", 1e-6))
        expected = np.sqrt(2.0 * spec.m * lam)
        fitted = decay_fit(u, power=coulomb_tail_power(spec.m, lam)).delta
        checks.append(IdentityCheck(CHECK_DECAY, abs(fitted - expected) / expected, 0.05))
        if cfg.kernel_eigs > 0:
            full = kernel_probe(ctx, cfg.kernel_eigs, seed=cfg.seed)
            radial = kernel_probe(ctx, cfg.kernel_eigs, radial=True, seed=cfg.seed)
            checks.append(IdentityCheck(CHECK_KERNEL, float(abs(full.kernel_count - 3)), 0.0))
            checks.append(IdentityCheck("kernel_span", 1.0 - full.span_overlap, 1e-3))
            checks.append(IdentityCheck("kernel_radial", float(radial.kernel_count), 0.0))
            write_json(full.eigenreport(), os.path.join(cfg.out, "eigenreport.json"))
    elif spec.family is Family.RESCALED:
        checks.append(pohozaev_check(u, spec.m, spec.c, result.energy.total).check(CHECK_POHOZAEV, 1e-6))
        checks.append(pohozaev_companion_check(u, spec.m, spec.c, result.multiplier)
                      .check("pohozaev_companion", 1e-6))
        state_delta = decay_fit(u).delta
        gradient_delta = gradient_decay_check(u).delta
        checks.append(IdentityCheck("decay_gradient", abs(gradient_delta - state_delta) / state_delta, 0.1))
    elif spec.family is Family.MASSLESS:
        saturation = gn_ratio(u) * mass(u) / 2.0
        checks.append(IdentityCheck(CHECK_GN, abs(saturation - 1.0), 1e-3))
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    result = _state_for_verify(cfg)
    manifest = Manifest(cfg.out, cfg.config_hash())
    checks = verification_checks(result, cfg)
    if os.path.exists(os.path.join(cfg.out, "eigenreport.json")) and result.spec.family is Family.LIMIT \
            and cfg.kernel_eigs > 0:
        manifest.add(os.path.join(cfg.out, "eigenreport.json"), "eigenreport")
    passed = all(check.passed for check in checks)
    report = {"family": result.spec.family.value, "checks": [c.as_dict() for c in checks], "passed": passed}
    manifest.add(write_json(report, os.path.join(cfg.out, "verify_report.json")), "verify-report")
    manifest.write()
    print(f"Verification of the {result.spec.family.value} state:")
    for check in checks:
        status = "pass" if check.passed else "FAIL"
        print(f"  {check.name:<20} {check.residual:.3e} (tol {check.tolerance:.1e}) {status}")
    return EXIT_OK if passed else EXIT_CONTRACT


# -------------------------------------------------
# scans
# -------------------------------------------------

def scan_convergence(cfg: RunConfig, manifest: Manifest) -> int:
    rows = convergence_study(cfg.m, cfg.c, solve_options(cfg, progress=False), grid=make_grid(cfg.L, cfg.n))
    table = convergence_table(rows)
    csv_path = manifest.add(write_csv(table, os.path.join(cfg.out, "convergence.csv")), "convergence")
    manifest.add(write_gnuplot_script(os.path.join(cfg.out, "convergence.gp"), csv_path, (1, 2), "c",
                                      "sup distance", "Q_c against the limit state", logscale_y=True), "gnuplot")
    slope = convergence_slope(rows)
    spread = decay_agreement(rows)
    decreasing = (all(r.converged for r in rows) and strictly_decreasing(table["sup_distance"])
                  and strictly_decreasing(table["multiplier_gap"]))
    decay_ok = bool(np.isfinite(spread) and spread <= DECAY_AGREEMENT)
    holds = decreasing and decay_ok
    summary = {"multiplier_gap_slope": slope, "decreasing": decreasing, "decay_spread": spread,
               "decay_agreement": decay_ok, "passed": holds, "m": cfg.m, "c": cfg.c}
    manifest.add(write_json(summary, os.path.join(cfg.out, "convergence_summary.json")), "summary")
    print(table.to_string(index=False))
    print(f"multiplier gap log-log slope: {slope:.3f}")
    print(f"decay rate spread of Q_c and |grad Q_c|: {spread:.3f} (allowed {DECAY_AGREEMENT:g})")
    return EXIT_OK if holds else EXIT_CONTRACT


def scan_uniqueness(cfg: RunConfig, manifest: Manifest) -> int:
    spec = problem_spec(cfg)
    report = multistart_uniqueness(spec, int(cfg.runs), solve_options(cfg, progress=False),
                                   grid=make_grid(cfg.L, cfg.n))
    frame = pd.DataFrame([{
        "run": i,
        "energy": run.energy.total,
        "multiplier": run.multiplier,
        "residual": run.residual_norm,
        "iterations": run.iterations,
        "converged": run.converged,
    } for i, run in enumerate(report.runs)])
    manifest.add(write_csv(frame, os.path.join(cfg.out, "uniqueness.csv")), "uniqueness")
    summary = {
        "family": spec.family.value,
        "pairwise_distance": report.pairwise_distance,
        "multiplier_spread": report.multiplier_spread,
        "inconclusive": report.inconclusive,
    }
    manifest.add(write_json(summary, os.path.join(cfg.out, "uniqueness_summary.json")), "summary")
    print(f"pairwise distance {report.pairwise_distance:.3e}, multiplier spread {report.multiplier_spread:.3e}")
    if report.inconclusive:
        print("inconclusive: not every run converged")
        return EXIT_NOT_CONVERGED
    unique = report.pairwise_distance <= 1e-6 and report.multiplier_spread <= 1e-8
    return EXIT_OK if unique else EXIT_CONTRACT


def scan_critical_mass(cfg: RunConfig, manifest: Manifest) -> int:
    grids = (make_grid(cfg.critical_L, cfg.coarse_n), make_grid(cfg.critical_L, cfg.fine_n))
    estimate = critical_mass_estimate(solve_options(cfg, progress=False), grids)
    frame = pd.DataFrame([
        {"n": g.points_per_dim, "L": g.half_width, "mass": r.mass, "residual": r.residual_norm,
         "converged": r.converged}
        for g, r in zip(grids, (estimate.coarse, estimate.fine))
    ])
    manifest.add(write_csv(frame, os.path.join(cfg.out, "critical_mass.csv")), "critical-mass")
    summary = {"estimate": estimate.estimate, "error_bar": estimate.error_bar,
               "relative_spread": estimate.relative_spread, "converged": estimate.converged}
    holds = estimate.converged and estimate.relative_spread <= 0.01
    if cfg.bracket:
        bracket = critical_mass_bracket(estimate.estimate, cfg.m, make_grid(cfg.L, cfg.n),
                                        solve_options(cfg, progress=False))
        summary["bracket"] = bracket
        holds = holds and bracket["below_converged"] and bracket["above_collapsed"]
    manifest.add(write_json(summary, os.path.join(cfg.out, "critical_mass.json")), "summary")
    print(f"N* = {estimate.estimate:.8f} +- {estimate.error_bar:.2e}")
    return EXIT_OK if holds else EXIT_CONTRACT


def scan_decay_bound(cfg: RunConfig, manifest: Manifest) -> int:
    m, lam = cfg.m, cfg.lambda_c
    delta = cfg.delta if cfg.delta is not None else 0.9 * allowed_rate(m, lam)
    report = verify_decay_bound(m, cfg.c, lam, delta, radii=default_radii(cfg.L))
    table = green_table(m, cfg.c, lam, delta, report.M, np.linspace(0.5, 4.0, 8))
    agreement = float(np.max(np.abs(table["G_quadrature"] - table["G_fourier"]) / table["G_quadrature"]))
    bound = IdentityCheck(CHECK_GREEN, float(report.violations), 0.0)
    methods = IdentityCheck("green_methods", agreement, 1e-4)
    csv_path = manifest.add(write_csv(table, os.path.join(cfg.out, "green.csv")), "green")
    manifest.add(write_gnuplot_script(os.path.join(cfg.out, "green.gp"), csv_path, (2, 3), "|z|", "G_c",
                                      "resolvent kernel", logscale_y=True), "gnuplot")
    short = short_range_bound(m, cfg.c, lam)
    fits = {str(c): green_decay_fit(m, c, lam, cfg.L).delta for c in cfg.c}
    summary = {
        "delta": delta,
        "M": report.M,
        "violations": report.violations,
        "offending": report.offending[:20],
        "single_point": report.single_point,
        "method_agreement": agreement,
        "short_range": [{"c": c, "max_G_r2": v} for c, v in short],
        "fitted_rates": fits,
        "checks": [bound.as_dict(), methods.as_dict()],
        "passed": bound.passed and methods.passed,
    }
    manifest.add(write_json(summary, os.path.join(cfg.out, "decay_bound.json")), "summary")
    print(f"delta={delta:.4f} M={report.M:.4e} violations={report.violations} agreement={agreement:.2e}")
    return EXIT_OK if bound.passed and methods.passed else EXIT_CONTRACT


SCANS = {
    "convergence": scan_convergence,
    "uniqueness": scan_uniqueness,
    "critical-mass": scan_critical_mass,
    "decay-bound": scan_decay_bound,
}


def cmd_scan(cfg: RunConfig, kind: str) -> int:
    manifest = Manifest(cfg.out, cfg.config_hash())
    code = SCANS[kind](cfg, manifest)
    manifest.write()
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level or "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        logging.getLogger().setLevel(getattr(logging, cfg.log_level, logging.INFO))
        os.makedirs(cfg.out, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_scan(cfg, args.kind)
    except (ConfigError, StateFileError, WindowError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except CollapseError as e:
        print(f"Collapse: {e}", file=sys.stderr)
        return EXIT_COLLAPSE


if __name__ == "__main__":
    sys.exit(main())
