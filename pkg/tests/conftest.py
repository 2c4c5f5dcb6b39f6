import numpy as np
import pytest

from taskalloc.game_core import reference_dynamics, solve_equilibrium
from taskalloc.protocols import smith

# q* for the reference dynamics, from a 40-digit mpmath root of
# sum_i (w_i / (R tanh(alpha q / 2)))^(1/beta) = 1
Q_STAR_GOLDEN = 94.10074403607389472766704
X_STAR_GOLDEN = np.array([0.129370895222235085, 0.277101436022943506, 0.593527668754821409])


@pytest.fixture(scope="session")
def dyn():
    return reference_dynamics()


@pytest.fixture(scope="session")
def rule():
    return smith(1 / 400)


@pytest.fixture(scope="session")
def eq(dyn):
    return solve_equilibrium(dyn)
