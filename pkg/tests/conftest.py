import numpy as np
import pytest

from hartree_lab.energy import ProblemSpec
from hartree_lab.solver import SolveOptions, solve_ground_state, solve_massless
from hartree_lab.spectral_grid import make_grid

# m = 2 keeps the ground state compact (decay rate about 1.14) so small boxes suffice
LIMIT_M = 2.0
RESCALED_C = 8.0


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(8.0, 32)


@pytest.fixture(scope="session")
def wide_grid():
    return make_grid(12.0, 64)


@pytest.fixture(scope="session")
def tight_options():
    return SolveOptions(tolerance=1e-9, max_iterations=4000)


@pytest.fixture(scope="session")
def limit_small(small_grid, tight_options):
    return solve_ground_state(ProblemSpec.limit(LIMIT_M), tight_options, grid=small_grid)


@pytest.fixture(scope="session")
def limit_wide(wide_grid, tight_options):
    return solve_ground_state(ProblemSpec.limit(LIMIT_M), tight_options, grid=wide_grid)


@pytest.fixture(scope="session")
def rescaled_wide(limit_wide, tight_options):
    return solve_ground_state(ProblemSpec.rescaled(LIMIT_M, RESCALED_C), tight_options, init=limit_wide.state)


@pytest.fixture(scope="session")
def massless_small(small_grid):
    return solve_massless(SolveOptions(tolerance=1e-9, max_iterations=4000), grid=small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
