"""Periodic cubic sampling grid, unitary transforms and quadrature on R^3.

The box [-L, L)^3 is sampled at n points per axis with the origin on a grid
point (index n/2). Transforms are unitary (``norm="ortho"``) so Parseval holds
without weights, and every integral over R^3 is a plain sum times spacing^3.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from hartree_lab.errors import DegenerateFieldError, SizingError

logger = logging.getLogger(__name__)

DEFAULT_HALF_WIDTH = 12.0
DEFAULT_POINTS_PER_DIM = 128


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridSpec:
    half_width: float
    points_per_dim: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of a single sample."""
        return self.spacing ** 3

    @property
    def shape(self) -> Tuple[int, int, int]:
        n = self.points_per_dim
        return (n, n, n)

    @property
    def origin_index(self) -> int:
        return self.points_per_dim // 2

    @property
    def k_max(self) -> float:
        """Largest wavenumber magnitude along one axis (the Nyquist value)."""
        return np.pi / self.spacing

    @cached_property
    def axis(self) -> np.ndarray:
        return _readonly(-self.half_width + self.spacing * np.arange(self.points_per_dim))

    @cached_property
    def coordinates(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        mesh = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return tuple(_readonly(np.ascontiguousarray(c)) for c in mesh)

    @cached_property
    def radius(self) -> np.ndarray:
        x, y, z = self.coordinates
        return _readonly(np.sqrt(x * x + y * y + z * z))

    @cached_property
    def k_axis(self) -> np.ndarray:
        """Axis wavenumbers (pi/L)*{-n/2,...,n/2-1} in FFT order."""
        return _readonly(2.0 * np.pi * sfft.fftfreq(self.points_per_dim, d=self.spacing))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Full lattice of wavevectors, shape (3, n, n, n), FFT order."""
        mesh = np.meshgrid(self.k_axis, self.k_axis, self.k_axis, indexing="ij")
        return _readonly(np.stack(mesh))

    @cached_property
    def k_norm(self) -> np.ndarray:
        return _readonly(np.sqrt(np.sum(self.wavenumbers ** 2, axis=0)))

    @cached_property
    def rk_components(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable wavenumber components on the half lattice used by rfftn."""
        n = self.points_per_dim
        kz = 2.0 * np.pi * sfft.rfftfreq(n, d=self.spacing)
        return (
            _readonly(self.k_axis.reshape(n, 1, 1).copy()),
            _readonly(self.k_axis.reshape(1, n, 1).copy()),
            _readonly(kz.reshape(1, 1, -1)),
        )

    @cached_property
    def rk_norm(self) -> np.ndarray:
        kx, ky, kz = self.rk_components
        return _readonly(np.sqrt(kx * kx + ky * ky + kz * kz))

    @cached_property
    def derivative_wavenumbers(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Half-lattice components with the Nyquist entry zeroed (real derivatives)."""
        half = self.points_per_dim // 2
        out = []
        for axis, comp in enumerate(self.rk_components):
            comp = comp.copy()
            index = [0, 0, 0]
            index[axis] = slice(None)
            line = comp[tuple(index)]
            if axis < 2:
                line[half] = 0.0
            else:
                line[-1] = 0.0
            out.append(_readonly(comp))
        return tuple(out)

    @cached_property
    def shell_index(self) -> Tuple[np.ndarray, np.ndarray]:
        """Compact class index of i^2+j^2+k^2 (offsets from the origin) and class sizes."""
        offsets = np.arange(self.points_per_dim) - self.origin_index
        i, j, k = np.meshgrid(offsets, offsets, offsets, indexing="ij")
        squared = (i * i + j * j + k * k).ravel()
        _, inverse, counts = np.unique(squared, return_inverse=True, return_counts=True)
        return _readonly(inverse.reshape(self.shape)), _readonly(counts.astype(float))


@dataclass(frozen=True, eq=False)
class Field:
    """Real scalar samples on a GridSpec. Values are finite and read-only."""
    grid: GridSpec
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid shape {self.grid.shape}")
        if values.flags.writeable:
            values = values.copy()
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, label: Optional[str] = None) -> "Field":
        return Field(self.grid, values, self.label if label is None else label)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(mass(self)))

    def sup_distance(self, other: "Field") -> float:
        return float(np.max(np.abs(self.values - other.values)))


def make_grid(half_width: float, points_per_dim: int) -> GridSpec:
    """Build the periodic grid [-L, L)^3 with n points per axis.

    Args:
        half_width: L > 0.
        points_per_dim: n, a power of two and at least 8.

    Raises:
        SizingError: for non-positive L or an n that is not a power of two >= 8.
    """
    if not np.isfinite(half_width) or half_width <= 0:
        raise SizingError(f"half_width must be positive, got {half_width}", half_width, points_per_dim)
    if int(points_per_dim) != points_per_dim:
        raise SizingError(f"points_per_dim must be an integer, got {points_per_dim}", half_width, points_per_dim)
    n = int(points_per_dim)
    if n < 8 or n & (n - 1):
        raise SizingError(f"points_per_dim must be a power of two >= 8, got {n}", half_width, n)
    return GridSpec(float(half_width), n)


# -------------------------------------------------
# Transforms (internal service for the other modules)
# -------------------------------------------------

def forward_transform(values: np.ndarray) -> np.ndarray:
    return sfft.fftn(values, norm="ortho")


def inverse_transform(coeffs: np.ndarray) -> np.ndarray:
    return sfft.ifftn(coeffs, norm="ortho").real


def real_forward(values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, norm="ortho")


def real_inverse(coeffs: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    return sfft.irfftn(coeffs, s=shape, norm="ortho")


def apply_symbol_values(grid: GridSpec, symbol_half: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Multiply by a symbol sampled on the half lattice (``grid.rk_norm`` layout)."""
    return real_inverse(symbol_half * real_forward(values), grid.shape)


def spectral_gradient(grid: GridSpec, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    coeffs = real_forward(values)
    return tuple(real_inverse(1j * k * coeffs, grid.shape) for k in grid.derivative_wavenumbers)


# -------------------------------------------------
# Quadrature
# -------------------------------------------------

def mass(u: Field) -> float:
    """Sum of u^2 * spacing^3."""
    return float(np.sum(u.values * u.values) * u.grid.cell_volume)


def spectral_mass(u: Field) -> float:
    """Wavenumber-space quadrature of |u_hat|^2 (equals mass by Parseval)."""
    coeffs = forward_transform(u.values)
    return float(np.sum(np.abs(coeffs) ** 2) * u.grid.cell_volume)


def inner(u: Field, v: Field) -> float:
    return float(np.sum(u.values * v.values) * u.grid.cell_volume)


def normalize(u: Field, target_mass: float) -> Field:
    """Rescale u so that mass(u) == target_mass.

    Raises:
        DegenerateFieldError: when u has zero mass.
    """
    if target_mass <= 0:
        raise ValueError(f"target_mass must be positive, got {target_mass}")
    current = mass(u)
    if not current > 0.0:
        raise DegenerateFieldError("cannot normalize a zero-mass field", mass=current)
    return u.with_values(u.values * np.sqrt(target_mass / current))


def gradient(u: Field) -> Tuple[Field, Field, Field]:
    return tuple(u.with_values(g, label=f"d{i + 1} {u.label}".strip())
                 for i, g in enumerate(spectral_gradient(u.grid, u.values)))


def gradient_magnitude(u: Field) -> Field:
    gx, gy, gz = spectral_gradient(u.grid, u.values)
    return u.with_values(np.sqrt(gx * gx + gy * gy + gz * gz), label=f"|grad {u.label}|".strip())


# -------------------------------------------------
# Radial structure and placement
# -------------------------------------------------

def radial_bins(u: Field, bin_width: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrays (mean radius, mean value, max deviation) over nonempty shells about the origin."""
    grid = u.grid
    width = 2.0 * grid.spacing if bin_width is None else float(bin_width)
    if width < grid.spacing * (1.0 - 1e-12):
        raise ValueError(f"bin_width {width} is below the grid spacing {grid.spacing}")
    radius = grid.radius.ravel()
    values = u.values.ravel()
    index = np.floor(radius / width).astype(np.int64)
    counts = np.bincount(index)
    occupied = counts > 0
    safe_counts = np.where(occupied, counts, 1)
    means = np.bincount(index, weights=values) / safe_counts
    radii = np.bincount(index, weights=radius) / safe_counts

    deviation = np.abs(values - means[index])
    order = np.argsort(index, kind="stable")
    sorted_index = index[order]
    starts = np.flatnonzero(np.r_[True, np.diff(sorted_index) != 0])
    max_dev = np.zeros_like(means)
    max_dev[sorted_index[starts]] = np.maximum.reduceat(deviation[order], starts)
    return radii[occupied], means[occupied], max_dev[occupied]


def radial_profile(u: Field, bin_width: Optional[float] = None) -> List[Tuple[float, float, float]]:
    """Radial profile about the origin as (radius, mean value, max deviation) rows.

    Bin width defaults to twice the grid spacing. The radius column is the mean
    radius of the samples in the bin.
    """
    radii, means, max_dev = radial_bins(u, bin_width)
    return [(float(r), float(v), float(d)) for r, v, d in zip(radii, means, max_dev)]


def radial_symmetrize(u: Field) -> Field:
    """Average u over lattice shells of equal |x| about the origin (an orthogonal projection)."""
    inverse, counts = u.grid.shell_index
    means = np.bincount(inverse.ravel(), weights=u.values.ravel()) / counts
    return u.with_values(means[inverse])


def radial_asymmetry(u: Field, max_radius: Optional[float] = None) -> float:
    """Largest within-shell deviation for shells with radius <= max_radius (default L/2)."""
    limit = 0.5 * u.grid.half_width if max_radius is None else max_radius
    symmetric = radial_symmetrize(u)
    inside = u.grid.radius <= limit
    return float(np.max(np.abs(u.values - symmetric.values)[inside]))


def barycenter(u: Field) -> np.ndarray:
    density = u.values * u.values
    total = np.sum(density)
    if not total > 0.0:
        raise DegenerateFieldError("barycenter of a zero field", mass=0.0)
    return np.array([np.sum(c * density) / total for c in u.grid.coordinates])


def align_to_origin(u: Field) -> Field:
    """Roll u by whole cells so its density barycenter sits at the grid point nearest the origin."""
    steps = np.rint(barycenter(u) / u.grid.spacing).astype(int)
    if not np.any(steps):
        return u
    return u.with_values(np.roll(u.values, tuple(-steps), axis=(0, 1, 2)))


def shift_field(u: Field, displacement: Sequence[float]) -> Field:
    """Translate u by an arbitrary displacement using Fourier phases (u(x - d))."""
    coeffs = real_forward(u.values)
    phase = sum(k * d for k, d in zip(u.grid.rk_components, displacement))
    return u.with_values(real_inverse(coeffs * np.exp(-1j * phase), u.grid.shape))


def gaussian_field(grid: GridSpec, center: Sequence[float] = (0.0, 0.0, 0.0), width: float = 1.0,
                   target_mass: Optional[float] = None, label: str = "gaussian") -> Field:
    x, y, z = grid.coordinates
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    u = Field(grid, np.exp(-r2 / (2.0 * width * width)), label)
    return u if target_mass is None else normalize(u, target_mass)
