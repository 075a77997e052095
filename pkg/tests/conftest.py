import numpy as np
import pytest

from trudinger_lab.grid import GridFunction, SpaceTimeGrid, optimal_modulus, oscillation
from trudinger_lab.infconv import InfConvParams, delta_from_modulus, inf_convolve
from trudinger_lab.solver import Params, solve


def kink_solution(nx: int = 41, T: float = 0.25, p: float = 3.0, M: float = 3.0) -> GridFunction:
    """Solver output from 2 + |x| on [-1, 1] with frozen endpoints and dt = dx^2."""
    dx = 2.0 / (nx - 1)
    nt = int(round(T / dx**2)) + 1
    grid = SpaceTimeGrid(-1.0, 1.0, 0.0, T, nx, nt)
    return solve(grid, lambda x: 2 + np.abs(x), None, Params(p=p, m=1.0, M=M)).u


@pytest.fixture(scope="session")
def p3_kink() -> GridFunction:
    return kink_solution()


@pytest.fixture(scope="session")
def p3_family(p3_kink):
    u = p3_kink
    omega_t = optimal_modulus(u, None, "time")
    osc = oscillation(u)
    out = []
    for k in range(3, 8):
        eps = 2.0**-k
        out.append(inf_convolve(u, InfConvParams(eps, delta_from_modulus(omega_t, eps, 2.0, osc))))
    return out
