"""Fourier-multiplier operators and the free-space Coulomb convolution."""
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.special import erf

from hartree_lab.spectral_grid import Field, GridSpec, apply_symbol_values, real_forward

logger = logging.getLogger(__name__)


class SymbolKind(str, Enum):
    RELATIVISTIC = "relativistic"
    RESCALED_ORIGINAL = "rescaled-original"
    NONRELATIVISTIC = "nonrelativistic"
    REMAINDER = "remainder"
    RESOLVENT = "resolvent"
    PRECONDITIONER = "preconditioner"
    MASSLESS = "massless"
    INVERSE_ROOT = "inverse-root"


_USES_C = {SymbolKind.RELATIVISTIC, SymbolKind.REMAINDER, SymbolKind.RESOLVENT, SymbolKind.INVERSE_ROOT}


@dataclass(frozen=True)
class MultiplierSymbol:
    """A radial Fourier multiplier with its parameters (mass m, light speed c, shift)."""
    kind: SymbolKind
    m: float = 1.0
    c: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SymbolKind(self.kind))
        if self.kind is not SymbolKind.MASSLESS and not self.m > 0:
            raise ValueError(f"{self.kind.value} symbol needs m > 0, got {self.m}")
        if self.kind in _USES_C and not self.c > 0:
            raise ValueError(f"{self.kind.value} symbol needs c > 0, got {self.c}")

    @classmethod
    def relativistic(cls, m: float, c: float) -> "MultiplierSymbol":
        return cls(SymbolKind.RELATIVISTIC, m=m, c=c)

    @classmethod
    def rescaled_original(cls, m: float) -> "MultiplierSymbol":
        return cls(SymbolKind.RESCALED_ORIGINAL, m=m)

    @classmethod
    def nonrelativistic(cls, m: float) -> "MultiplierSymbol":
        return cls(SymbolKind.NONRELATIVISTIC, m=m)

    @classmethod
    def remainder(cls, m: float, c: float) -> "MultiplierSymbol":
        return cls(SymbolKind.REMAINDER, m=m, c=c)

    @classmethod
    def resolvent(cls, m: float, c: float, shift: float) -> "MultiplierSymbol":
        return cls(SymbolKind.RESOLVENT, m=m, c=c, shift=shift)

    @classmethod
    def preconditioner(cls, m: float, shift: float) -> "MultiplierSymbol":
        return cls(SymbolKind.PRECONDITIONER, m=m, shift=shift)

    @classmethod
    def massless(cls) -> "MultiplierSymbol":
        return cls(SymbolKind.MASSLESS)

    @classmethod
    def inverse_root(cls, m: float, c: float) -> "MultiplierSymbol":
        return cls(SymbolKind.INVERSE_ROOT, m=m, c=c)

    def of_magnitude(self, k: np.ndarray) -> np.ndarray:
        """Evaluate the symbol at wavenumber magnitudes |k|."""
        k = np.asarray(k, dtype=float)
        m, c = self.m, self.c
        kind = self.kind
        if kind is SymbolKind.RELATIVISTIC:
            return _relativistic(k, m, c)
        if kind is SymbolKind.RESCALED_ORIGINAL:
            return _relativistic(k, m, 1.0)
        if kind is SymbolKind.NONRELATIVISTIC:
            return k * k / (2.0 * m)
        if kind is SymbolKind.REMAINDER:
            # rel - |k|^2/(2m) rewritten without subtraction
            rest = m * c * c
            root = np.sqrt((c * k) ** 2 + rest * rest)
            return -_relativistic(k, m, c) * k * k / (2.0 * m * (root + rest))
        if kind is SymbolKind.RESOLVENT:
            return 1.0 / (_relativistic(k, m, c) + self.shift)
        if kind is SymbolKind.PRECONDITIONER:
            return 1.0 / (k * k / (2.0 * m) + self.shift)
        if kind is SymbolKind.MASSLESS:
            return np.abs(k)
        if kind is SymbolKind.INVERSE_ROOT:
            rest = m * c * c
            return rest / np.sqrt((k / (m * c)) ** 2 + 1.0)
        raise ValueError(f"unknown symbol kind {kind}")


def _relativistic(k: np.ndarray, m: float, c: float) -> np.ndarray:
    """sqrt(c^2|k|^2 + m^2c^4) - mc^2 in the stabilized form c^2|k|^2 / (root + mc^2)."""
    rest = m * c * c
    ck2 = (c * k) ** 2
    return ck2 / (np.sqrt(ck2 + rest * rest) + rest)


def symbol_value(s: MultiplierSymbol, k: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Symbol at a wavevector (last axis of length 3) or at a magnitude (scalar)."""
    k = np.asarray(k, dtype=float)
    magnitude = np.abs(k) if k.ndim == 0 else np.linalg.norm(k, axis=-1)
    value = s.of_magnitude(magnitude)
    return float(value) if np.ndim(value) == 0 else value


@lru_cache(maxsize=64)
def symbol_on_half_lattice(s: MultiplierSymbol, grid: GridSpec) -> np.ndarray:
    values = s.of_magnitude(grid.rk_norm)
    values.setflags(write=False)
    return values


@lru_cache(maxsize=8)
def half_lattice_weights(grid: GridSpec) -> np.ndarray:
    """Multiplicities that turn a half-lattice sum into the full-lattice sum."""
    n = grid.points_per_dim
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    weights = weights.reshape(1, 1, -1)
    weights.setflags(write=False)
    return weights


def apply_multiplier(s: MultiplierSymbol, u: Field) -> Field:
    """inverse_transform(symbol * forward_transform(u))."""
    return u.with_values(apply_symbol_values(u.grid, symbol_on_half_lattice(s, u.grid), u.values))


def quadratic_form_values(grid: GridSpec, symbol_half: np.ndarray, values: np.ndarray) -> float:
    coeffs = real_forward(values)
    power = coeffs.real ** 2 + coeffs.imag ** 2
    return float(np.sum(symbol_half * power * half_lattice_weights(grid)) * grid.cell_volume)


def quadratic_form(s: MultiplierSymbol, u: Field) -> float:
    """<S u, u> computed in wavenumber space as sum symbol * |u_hat|^2 * spacing^3."""
    return quadratic_form_values(u.grid, symbol_on_half_lattice(s, u.grid), u.values)


# -------------------------------------------------
# Coulomb convolution |x|^{-1} * rho
# -------------------------------------------------

@lru_cache(maxsize=8)
def coulomb_kernel(grid: GridSpec) -> np.ndarray:
    """Transform of 1/|x| truncated at radius 2L, on the half lattice of the (2n)^3 padded grid."""
    n2 = 2 * grid.points_per_dim
    h = grid.spacing
    k_full = 2.0 * np.pi * sfft.fftfreq(n2, d=h)
    kz = 2.0 * np.pi * sfft.rfftfreq(n2, d=h)
    k2 = k_full.reshape(-1, 1, 1) ** 2 + k_full.reshape(1, -1, 1) ** 2 + kz.reshape(1, 1, -1) ** 2
    radius = 2.0 * grid.half_width
    k = np.sqrt(k2)
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = 8.0 * np.pi * np.sin(0.5 * radius * k) ** 2 / k2
    kernel[0, 0, 0] = 2.0 * np.pi * radius * radius
    kernel.setflags(write=False)
    logger.debug("built Coulomb kernel for n=%d L=%g", grid.points_per_dim, grid.half_width)
    return kernel


@lru_cache(maxsize=8)
def _face_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def _fold_faces(ext: np.ndarray) -> np.ndarray:
    """Adds the sample at +L back onto the one at -L, axis by axis."""
    for axis in range(3):
        ext = np.moveaxis(ext, axis, 0)
        ext = np.concatenate([ext[:1] + ext[-1:], ext[1:-1]], axis=0)
        ext = np.moveaxis(ext, 0, axis)
    return ext


def coulomb_values(grid: GridSpec, rho: np.ndarray) -> np.ndarray:
    # the -L face sample is shared evenly between -L and +L; the operator then commutes
    # with reflections through the origin sample
    n = grid.points_per_dim
    weights = _face_weights(n)
    padded_shape = (2 * n,) * 3
    padded = np.zeros(padded_shape)
    padded[:n + 1, :n + 1, :n + 1] = np.pad(rho, ((0, 1),) * 3, mode="wrap") * weights
    potential = sfft.irfftn(sfft.rfftn(padded) * coulomb_kernel(grid), s=padded_shape)
    return np.ascontiguousarray(_fold_faces(potential[:n + 1, :n + 1, :n + 1] * weights))


def coulomb_potential(rho: Field) -> Field:
    """Free-space |x|^{-1} * rho by zero padding and the truncated-kernel transform."""
    return rho.with_values(coulomb_values(rho.grid, rho.values), label=f"phi[{rho.label}]")


def coulomb_sup_bound_check(u: Field) -> Tuple[float, float]:
    """(max |phi[u^2]|, ||u||_4^2 + ||u||_2^2)."""
    h3 = u.grid.cell_volume
    density = u.values * u.values
    lhs = float(np.max(np.abs(coulomb_values(u.grid, density)))) if np.any(density) else 0.0
    rhs = float(np.sqrt(np.sum(density * density) * h3) + np.sum(density) * h3)
    return lhs, rhs


def coulomb_gaussian_oracle(r: Union[float, np.ndarray], sigma: float = 1.0) -> Union[float, np.ndarray]:
    """Potential of a unit-integral isotropic Gaussian density: erf(r/(sqrt(2) sigma))/r."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(r > 0, erf(r / (np.sqrt(2.0) * sigma)) / r, np.sqrt(2.0 / np.pi) / sigma)
    return float(value) if value.ndim == 0 else value


def remainder_bound_violations(m: float, c: float, grid: GridSpec) -> Tuple[int, int]:
    """Lattice points breaking the two-regime envelope of the remainder symbol.

    Returns (violations with |k| <= mc/2 against |k|^4/(8m^3c^2),
             violations with |k| >= mc/2 against 36|k|^4/(m^3c^2)).
    """
    k = grid.k_norm
    value = np.abs(MultiplierSymbol.remainder(m, c).of_magnitude(k))
    quartic = k ** 4 / (m ** 3 * c * c)
    low = k <= 0.5 * m * c
    low_violations = int(np.count_nonzero(value[low] > quartic[low] / 8.0 * (1.0 + 1e-12)))
    high_violations = int(np.count_nonzero(value[~low] > 36.0 * quartic[~low]))
    return low_violations, high_violations
