"""Kernel of the shifted resolvent (sqrt(-c^2 Laplacian + m^2c^4) - mc^2 + lambda)^{-1}.

Three evaluations are provided: the Bessel-K2 time integral (``green_quadrature``),
a one-dimensional Fourier-sine inversion with the singular part subtracted
(``green_fourier_radial``) and the periodised grid inversion (``green_fourier``).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import fft as sfft
from scipy.integrate import quad
from scipy.special import k1, kv, kve
from scipy.stats import linregress

from hartree_lab.diagnostics import DecayFit
from hartree_lab.errors import QuadratureError, WindowError
from hartree_lab.operators import MultiplierSymbol
from hartree_lab.spectral_grid import Field, GridSpec
from hartree_lab.workers import run_parallel

logger = logging.getLogger(__name__)

K2_AT_ONE = 1.6248388986351774
BESSEL_K2_SMALL_BOUND = 2.0
BESSEL_K2_LARGE_BOUND = np.e * K2_AT_ONE
QUADRATURE_REL_TOL = 1e-8
# exponent beyond which e^{-x} is zero in double precision
UNDERFLOW_EXPONENT = 745.0


# -------------------------------------------------
# Bessel K2
# -------------------------------------------------

def _positive_argument(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("Bessel K2 needs a positive argument")
    return x


def _as_output(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def bessel_k2(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Modified Bessel function of the second kind of order 2; underflows to 0 for large x."""
    return _as_output(kv(2, _positive_argument(x)))


def bessel_k2_scaled(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """e^x K2(x)."""
    return _as_output(kve(2, _positive_argument(x)))


def bessel_regime_check(m: float, c_list: Sequence[float], w_values: Sequence[float]) -> Tuple[int, int]:
    """Violations of the two envelopes of K2(c m w) on a (c, w) grid.

    Returns (count with w < 2/(mc) where K2 > 2/(cmw)^2,
             count with w >= 1/(mc) where K2 > e K2(1) e^{-cmw}/sqrt(cmw)).
    """
    small = large = 0
    w_values = np.asarray(w_values, dtype=float)
    for c in c_list:
        x = c * m * w_values
        scaled = kve(2, _positive_argument(x))
        near = w_values < 2.0 / (m * c)
        far = w_values >= 1.0 / (m * c)
        # x^2 K2(x) and sqrt(x) e^x K2(x), the quantities each envelope bounds
        small += int(np.count_nonzero(x[near] ** 2 * scaled[near] * np.exp(-x[near])
                                      > BESSEL_K2_SMALL_BOUND * (1.0 + 1e-12)))
        large += int(np.count_nonzero(np.sqrt(x[far]) * scaled[far] > BESSEL_K2_LARGE_BOUND * (1.0 + 1e-12)))
    return small, large


# -------------------------------------------------
# Point evaluations
# -------------------------------------------------

@dataclass(frozen=True)
class GreenEval:
    radius: float
    value: float
    method: str
    m: float
    c: float
    lambda_c: float


def _check_parameters(radius: float, m: float, c: float, lambda_c: float):
    if not radius > 0:
        raise ValueError(f"the kernel is singular at |z| = 0; got radius {radius}")
    if not (m > 0 and c > 0 and lambda_c > 0):
        raise ValueError(f"m, c and lambda_c must be positive, got {m}, {c}, {lambda_c}")


def _checked_quad(integrand, a, b, radius: float, **kwargs) -> float:
    value, abserr = quad(integrand, a, b, epsabs=0.0, epsrel=1e-11, limit=400, **kwargs)
    if not np.isfinite(value) or abserr > QUADRATURE_REL_TOL * max(abs(value), 1e-300):
        raise QuadratureError(f"quadrature at |z| = {radius} missed its target: value {value}, "
                              f"error estimate {abserr}", radius=radius, abserr=abserr)
    return value


def green_quadrature(radius: float, m: float, c: float, lambda_c: float) -> float:
    """m^2 c/(2 pi^2) int_0^inf e^{-t(lambda_c/c - mc)} t/(t^2+|z|^2) K2(mc sqrt(t^2+|z|^2)) dt.

    Evaluated with t = |z| sinh(s), which turns the integrand into
    exp(-mc|z| e^{-s} - |z| sinh(s) lambda_c/c) tanh(s) e^{y} K2(y), y = mc|z| cosh(s);
    the exponentials are recombined so nothing overflows. The outer limit is cut where
    the damping factor underflows, since cosh(s) itself overflows past s ~ 710.

    Raises:
        ValueError: for |z| <= 0 or nonpositive parameters.
        QuadratureError: when the error estimate exceeds 1e-8 relative.
    """
    _check_parameters(radius, m, c, lambda_c)
    mcz = m * c * radius
    damping = radius * lambda_c / c

    def integrand(s: float) -> float:
        with np.errstate(over="ignore"):
            value = np.exp(-mcz * np.exp(-s) - damping * np.sinh(s)) * np.tanh(s) * kve(2, mcz * np.cosh(s))
        return value if np.isfinite(value) else 0.0

    split = np.arcsinh(1.0)
    cutoff = max(2.0 * split, float(np.arcsinh(UNDERFLOW_EXPONENT / damping)))
    total = (_checked_quad(integrand, 0.0, split, radius)
             + _checked_quad(integrand, split, cutoff, radius))
    return m * m * c / (2.0 * np.pi ** 2) * total


def green_fourier_radial(radius: float, m: float, c: float, lambda_c: float) -> float:
    """(1/(2 pi^2 r)) int_0^inf k f(k) sin(k r) dk for the resolvent symbol f.

    f is split as 1/(c sqrt(k^2 + M^2)) + B/(A (A - B)), M = mc, A = c sqrt(k^2 + M^2),
    B = mc^2 - lambda_c. The first part transforms to M K1(M r)/(2 pi^2 c r); the second
    decays like 1/k^2 and goes through the Fourier-sine rule for infinite intervals.
    """
    _check_parameters(radius, m, c, lambda_c)
    big_m = m * c
    rest = m * c * c
    b = rest - lambda_c
    relativistic = MultiplierSymbol.relativistic(m, c)

    def integrand(k: float) -> float:
        a = c * np.sqrt(k * k + big_m * big_m)
        return k * b / (a * (relativistic.of_magnitude(k) + lambda_c))

    singular = big_m * k1(big_m * radius) / (2.0 * np.pi ** 2 * c * radius)
    value, abserr = quad(integrand, 0.0, np.inf, weight="sin", wvar=radius, epsabs=1e-13, limlst=100)
    tail = value / (2.0 * np.pi ** 2 * radius)
    result = singular + tail
    if not np.isfinite(result) or abserr / (2.0 * np.pi ** 2 * radius) > 1e-6 * abs(result):
        raise QuadratureError(f"Fourier-sine inversion at |z| = {radius} missed its target (error {abserr})",
                              radius=radius, abserr=abserr)
    return float(result)


def green_eval(radius: float, m: float, c: float, lambda_c: float, method: str = "quadrature") -> GreenEval:
    if method == "quadrature":
        value = green_quadrature(radius, m, c, lambda_c)
    elif method == "fourier":
        value = green_fourier_radial(radius, m, c, lambda_c)
    else:
        raise ValueError(f"method must be 'quadrature' or 'fourier', got {method!r}")
    return GreenEval(float(radius), float(value), method, m, c, lambda_c)


def green_fourier(grid: GridSpec, m: float, c: float, lambda_c: float) -> Field:
    """Grid inversion of the resolvent symbol, centred on the origin sample.

    The result is periodic; it approximates the kernel away from the box faces.
    """
    if not lambda_c > 0:
        raise ValueError(f"lambda_c must be positive, got {lambda_c}")
    symbol = 1.0 / (MultiplierSymbol.relativistic(m, c).of_magnitude(grid.k_norm) + lambda_c)
    values = sfft.fftshift(sfft.ifftn(symbol).real) / grid.cell_volume
    return Field(grid, values, label=f"G(m={m:g}, c={c:g}, lambda={lambda_c:g})")


# -------------------------------------------------
# Decay bound
# -------------------------------------------------

def limit_decay_rate(m: float, c: float, lambda_c: float) -> float:
    """Exponential rate of the kernel: sqrt(2 m lambda_c - lambda_c^2/c^2)."""
    return float(np.sqrt(2.0 * m * lambda_c - (lambda_c / c) ** 2))


def allowed_rate(m: float, lambda_c: float) -> float:
    """min{m/2, sqrt(lambda_c m)}: every delta below it satisfies the uniform bound."""
    return float(min(0.5 * m, np.sqrt(lambda_c * m)))


@dataclass
class DecayBoundReport:
    delta: float
    M: float
    violations: int
    offending: List[Tuple[float, float]] = field(default_factory=list)
    single_point: bool = False
    reference_c: float = 0.0

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _sweep(radii: np.ndarray, m: float, c: float, lambda_c: float) -> np.ndarray:
    return np.array([green_quadrature(r, m, c, lambda_c) for r in radii])


def default_radii(half_width: float = 12.0, count: int = 48) -> np.ndarray:
    return np.linspace(0.2, 0.5 * half_width, count)


def verify_decay_bound(
    m: float,
    c_list: Sequence[float],
    lambda_c: float,
    delta: float,
    radii: Optional[np.ndarray] = None,
    prefactor: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> DecayBoundReport:
    """Check G_c(|z|) <= M e^{-delta |z|}/|z|^2 for every c with a single M.

    M is the smallest prefactor that works at the smallest c of the list, unless
    ``prefactor`` is given. Radii default to [0.2, 6].
    """
    if not c_list:
        raise ValueError("c_list must not be empty")
    cs = sorted(float(c) for c in c_list)
    radii = default_radii() if radii is None else np.asarray(radii, dtype=float)
    sweeps = run_parallel(lambda c: _sweep(radii, m, c, lambda_c), [(c,) for c in cs],
                          max_workers=max_workers, desc="decay bound sweeps")
    envelope = np.exp(-delta * radii) / radii ** 2
    if prefactor is None:
        prefactor = float(np.max(sweeps[0] / envelope))
    offending = []
    for c, values in zip(cs, sweeps):
        bad = values > prefactor * envelope * (1.0 + 1e-9)
        offending.extend((c, float(r)) for r in radii[bad])
    if offending:
        logger.warning("decay bound with delta=%g fails at %d radii (first: c=%g, |z|=%g)",
                       delta, len(offending), *offending[0])
    return DecayBoundReport(delta, prefactor, len(offending), offending, len(cs) == 1, cs[0])


def green_decay_fit(m: float, c: float, lambda_c: float, half_width: float = 12.0, count: int = 24) -> DecayFit:
    """Slope of log(G_c |z|) on [max(1, 5/(mc)), L/2 - 2]; G_c ~ e^{-kappa |z|}/|z| far out."""
    r_min = max(1.0, 5.0 / (m * c))
    r_max = 0.5 * half_width - 2.0
    if not r_min < r_max:
        raise WindowError(f"empty fit window ({r_min}, {r_max})", window=(r_min, r_max))
    radii = np.linspace(r_min, r_max, count)
    values = _sweep(radii, m, c, lambda_c)
    fit = linregress(radii, np.log(values * radii))
    return DecayFit(delta=-float(fit.slope), prefactor=float(np.exp(fit.intercept)),
                    window=(r_min, r_max), fit_quality=float(fit.rvalue ** 2))


def short_range_bound(m: float, c_list: Sequence[float], lambda_c: float, count: int = 16) -> List[Tuple[float, float]]:
    """(c, max G_c(|z|) |z|^2 over 0 < |z| <= 1/(mc)) per c."""
    out = []
    for c in c_list:
        radii = np.linspace(0.05, 1.0, count) / (m * c)
        out.append((float(c), float(np.max(_sweep(radii, m, c, lambda_c) * radii ** 2))))
    return out


def green_table(m: float, c_list: Sequence[float], lambda_c: float, delta: float, prefactor: float,
                radii: np.ndarray) -> pd.DataFrame:
    """Rows (c, |z|, G_quadrature, G_fourier, bound_value)."""
    rows = []
    for c in c_list:
        for r in radii:
            rows.append({
                "c": float(c),
                "radius": float(r),
                "G_quadrature": green_quadrature(r, m, c, lambda_c),
                "G_fourier": green_fourier_radial(r, m, c, lambda_c),
                "bound_value": prefactor * np.exp(-delta * r) / r ** 2,
            })
    return pd.DataFrame(rows, columns=["c", "radius", "G_quadrature", "G_fourier", "bound_value"])
