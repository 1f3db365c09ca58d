"""Energy functionals, Euler-Lagrange residuals, multipliers and the GN ratio."""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from hartree_lab.errors import DegenerateFieldError
from hartree_lab.operators import (
    MultiplierSymbol,
    coulomb_values,
    quadratic_form_values,
    symbol_on_half_lattice,
)
from hartree_lab.spectral_grid import Field, GridSpec, apply_symbol_values, make_grid, mass

logger = logging.getLogger(__name__)


class Family(str, Enum):
    ORIGINAL = "original"
    RESCALED = "rescaled"
    LIMIT = "limit"
    MASSLESS = "massless"


@dataclass(frozen=True)
class ProblemSpec:
    """Which variational problem is posed, with its physical parameters.

    original(m, N): kinetic sqrt(-Laplacian + m^2) - m, mass constraint N.
    rescaled(m, c): kinetic sqrt(-c^2 Laplacian + m^2 c^4) - m c^2, unit mass.
    limit(m): kinetic -Laplacian/(2m), unit mass.
    massless: kinetic sqrt(-Laplacian), no physical mass parameter.
    """
    family: Family
    m: float = 1.0
    c: float = 1.0
    N: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is not Family.MASSLESS and not self.m > 0:
            raise ValueError(f"m must be positive for the {self.family.value} family, got {self.m}")
        if self.family is Family.ORIGINAL and not self.N > 0:
            raise ValueError(f"N must be positive for the original family, got {self.N}")
        if self.family is Family.RESCALED and not self.c > 0:
            raise ValueError(f"c must be positive for the rescaled family, got {self.c}")

    @classmethod
    def original(cls, m: float, N: float) -> "ProblemSpec":
        return cls(Family.ORIGINAL, m=m, N=N)

    @classmethod
    def rescaled(cls, m: float, c: float) -> "ProblemSpec":
        return cls(Family.RESCALED, m=m, c=c)

    @classmethod
    def limit(cls, m: float) -> "ProblemSpec":
        return cls(Family.LIMIT, m=m)

    @classmethod
    def massless(cls) -> "ProblemSpec":
        return cls(Family.MASSLESS)

    @property
    def target_mass(self) -> float:
        return self.N if self.family is Family.ORIGINAL else 1.0

    @property
    def kinetic_symbol(self) -> MultiplierSymbol:
        if self.family is Family.ORIGINAL:
            return MultiplierSymbol.rescaled_original(self.m)
        if self.family is Family.RESCALED:
            return MultiplierSymbol.relativistic(self.m, self.c)
        if self.family is Family.LIMIT:
            return MultiplierSymbol.nonrelativistic(self.m)
        return MultiplierSymbol.massless()

    def describe(self) -> dict:
        return {
            "family": self.family.value,
            "m": None if self.family is Family.MASSLESS else self.m,
            "c": self.c if self.family is Family.RESCALED else None,
            "N": self.target_mass,
        }


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float
    total: float

    @classmethod
    def from_terms(cls, kinetic: float, potential: float) -> "EnergyBreakdown":
        return cls(kinetic, potential, kinetic - potential)

    def as_dict(self) -> dict:
        return {"kinetic": self.kinetic, "potential": self.potential, "total": self.total}


class StateTerms(NamedTuple):
    """Operator images of one iterate, shared by the energy and its gradient."""
    kinetic_values: np.ndarray
    potential_values: np.ndarray
    kinetic: float
    potential: float
    mass: float


def evaluate_state(spec: ProblemSpec, grid: GridSpec, values: np.ndarray) -> StateTerms:
    h3 = grid.cell_volume
    t_values = apply_symbol_values(grid, symbol_on_half_lattice(spec.kinetic_symbol, grid), values)
    density = values * values
    phi = coulomb_values(grid, density)
    kinetic = float(np.sum(t_values * values) * h3)
    potential = 0.5 * float(np.sum(phi * density) * h3)
    return StateTerms(t_values, phi, kinetic, potential, float(np.sum(density) * h3))


def _require_mass(u: Field) -> float:
    current = mass(u)
    if not current > 0.0:
        raise DegenerateFieldError("operation needs a nonzero field", mass=current)
    return current


def energy(spec: ProblemSpec, u: Field) -> EnergyBreakdown:
    """Kinetic form of the family's multiplier minus the Hartree term 1/2 <phi[u^2], u^2>."""
    kinetic = quadratic_form_values(u.grid, symbol_on_half_lattice(spec.kinetic_symbol, u.grid), u.values)
    density = u.values * u.values
    potential = 0.5 * float(np.sum(coulomb_values(u.grid, density) * density) * u.grid.cell_volume)
    return EnergyBreakdown.from_terms(kinetic, potential)


def el_residual(spec: ProblemSpec, u: Field, mu: float) -> Field:
    """T u - phi[u^2] u + mu u."""
    _require_mass(u)
    terms = evaluate_state(spec, u.grid, u.values)
    return u.with_values(terms.kinetic_values - terms.potential_values * u.values + mu * u.values,
                         label="el_residual")


def lagrange_multiplier(spec: ProblemSpec, u: Field) -> float:
    """mu = (<T u, u> - <phi[u^2] u, u>) / mass(u).

    With this sign T Q - phi[Q^2] Q = mu Q at a solution, so mu < 0 for ground
    states and el_residual(spec, Q, -mu) vanishes.
    """
    current = _require_mass(u)
    terms = evaluate_state(spec, u.grid, u.values)
    return (terms.kinetic - 2.0 * terms.potential) / current


def energy_gradient(spec: ProblemSpec, u: Field) -> Field:
    """Unconstrained derivative of the energy: 2 (T u - phi[u^2] u)."""
    terms = evaluate_state(spec, u.grid, u.values)
    return u.with_values(2.0 * (terms.kinetic_values - terms.potential_values * u.values), label="gradient")


def half_laplacian_form(u: Field) -> float:
    """||(-Laplacian)^{1/4} u||^2 = sum |k| |u_hat|^2 spacing^3."""
    return quadratic_form_values(u.grid, symbol_on_half_lattice(MultiplierSymbol.massless(), u.grid), u.values)


def gn_ratio(u: Field) -> float:
    """Hartree term over the half-Laplacian form times the mass.

    Bounded above by 2/||w||^2 with w the massless ground state.
    """
    current = _require_mass(u)
    density = u.values * u.values
    hartree = float(np.sum(coulomb_values(u.grid, density) * density) * u.grid.cell_volume)
    return hartree / (half_laplacian_form(u) * current)


def scale_to_rescaled(u: Field, c: float, label: Optional[str] = None) -> Field:
    """u~(x) = c^2 u(c x), realised exactly on the grid of half-width L/c."""
    grid = make_grid(u.grid.half_width / c, u.grid.points_per_dim)
    return Field(grid, c * c * u.values, label if label is not None else u.label)
