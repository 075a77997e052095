"""Implicit finite-difference solver for d/dt(u^{p-1}) = div(|Du|^{p-2} Du) in 1-D.

Backward Euler on the conserved variable w = u^{p-1}, conservative flux
differencing in space, damped Newton with an analytic tridiagonal Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded
from sklearn.base import BaseEstimator

from .grid import GridFunction, SpaceTimeGrid


class SolverError(RuntimeError):
    """Failure inside the nonlinear solve; carries diagnostics when available."""

    def __init__(self, message: str, residual_norm: float | None = None, time_index: int | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.time_index = time_index


class NewtonConvergenceError(SolverError):
    pass


class PositivityLostError(SolverError):
    pass


@dataclass(frozen=True)
class Params:
    """Equation parameters.

    ``q`` defaults to 2 for p >= 2 and to p/(p-1) + 1/2 otherwise.
    ``delta_reg`` of None means 0 for p >= 2 and dx**2 for p < 2.
    """

    p: float
    m: float
    M: float
    q: float | None = None
    delta_reg: float | None = None

    def __post_init__(self) -> None:
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not (0 < self.m <= self.M):
            raise ValueError(f"need 0 < m <= M, got m={self.m}, M={self.M}")
        if self.q is None:
            object.__setattr__(self, "q", 2.0 if self.p >= 2 else self.p / (self.p - 1) + 0.5)
        if self.p >= 2 and self.q != 2:
            raise ValueError(f"q must equal 2 when p >= 2, got {self.q}")
        if self.p < 2 and not self.q > self.p / (self.p - 1):
            raise ValueError(f"q must exceed p/(p-1) = {self.p / (self.p - 1)} when p < 2, got {self.q}")
        if self.delta_reg is not None and self.delta_reg < 0:
            raise ValueError("delta_reg must be nonnegative")

    def delta_for(self, dx: float) -> float:
        if self.delta_reg is not None:
            return float(self.delta_reg)
        return 0.0 if self.p >= 2 else dx * dx


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    damping: float = 1.0
    clip_to_bounds: bool = False
    max_halvings: int = 30

    def __post_init__(self) -> None:
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")


def flux(d: np.ndarray, p: float, delta: float) -> np.ndarray:
    """(delta + d^2)^((p-2)/2) * d, taken as 0 where delta + d^2 = 0."""
    if p == 2:
        return np.array(d, dtype=np.float64, copy=True)
    a = delta + d * d
    with np.errstate(divide="ignore", invalid="ignore"):
        f = a ** ((p - 2) / 2) * d
    return np.where(a > 0, f, 0.0)


def flux_derivative(d: np.ndarray, p: float, delta: float) -> np.ndarray:
    """d(flux)/dd = (delta + d^2)^((p-4)/2) * (delta + (p-1) d^2)."""
    if p == 2:
        return np.ones_like(d)
    a = delta + d * d
    with np.errstate(divide="ignore", invalid="ignore"):
        g = a ** ((p - 4) / 2) * (delta + (p - 1) * d * d)
    return np.where(a > 0, g, 0.0)


def p_laplacian(u_slice, dx: float, params: Params, delta: float | None = None) -> np.ndarray:
    """Conservative discrete p-Laplacian of one time slice.

    Interior entries hold (F_{i+1/2} - F_{i-1/2}) / dx with F the regularized
    flux of the forward difference. The two endpoints are NaN.
    """
    u = np.asarray(u_slice, dtype=np.float64)
    if u.ndim != 1 or u.size < 3:
        raise ValueError("p_laplacian needs a 1-D slice with at least 3 nodes")
    if delta is None:
        delta = params.delta_for(dx)
    F = flux(np.diff(u) / dx, params.p, delta)
    out = np.full(u.size, np.nan)
    out[1:-1] = np.diff(F) / dx
    return out


def _residual(u: np.ndarray, w_prev: np.ndarray, dt: float, dx: float, p: float, delta: float) -> np.ndarray:
    F = flux(np.diff(u) / dx, p, delta)
    return u[1:-1] ** (p - 1) - w_prev[1:-1] - dt * np.diff(F) / dx


def _jacobian_bands(u: np.ndarray, dt: float, dx: float, p: float, delta: float) -> np.ndarray:
    g = flux_derivative(np.diff(u) / dx, p, delta) * (dt / (dx * dx))
    n = u.size - 2
    ab = np.zeros((3, n))
    ab[1] = (p - 1) * u[1:-1] ** (p - 2) + g[1:] + g[:-1]
    ab[0, 1:] = -g[1:-1]
    ab[2, :-1] = -g[1:-1]
    return ab


@dataclass
class StepInfo:
    iterations: int
    residual_norm: float


def _newton_step(u_n, dt, params, bc, config, dx) -> tuple[np.ndarray, StepInfo]:
    p = params.p
    delta = params.delta_for(dx)
    u_n = np.asarray(u_n, dtype=np.float64)
    left, right = float(bc[0]), float(bc[1])
    if np.any(u_n <= 0) or left <= 0 or right <= 0:
        raise PositivityLostError("positivity lost: data must be strictly positive")
    w_prev = u_n ** (p - 1)
    u = u_n.copy()
    u[0], u[-1] = left, right
    lo = min(float(u_n.min()), left, right)
    hi = max(float(u_n.max()), left, right)
    if u.size == 2:
        return u, StepInfo(0, 0.0)
    res = _residual(u, w_prev, dt, dx, p, delta)
    norm = float(np.abs(res).max())
    it = 0
    while norm > config.newton_tol:
        if it >= config.newton_max_iter:
            raise NewtonConvergenceError(
                f"Newton did not converge in {it} iterations (residual {norm:.3e})", residual_norm=norm
            )
        du = solve_banded((1, 1), _jacobian_bands(u, dt, dx, p, delta), -res)
        lam = config.damping
        accepted = False
        saw_nonpositive = False
        for _ in range(config.max_halvings):
            trial = u.copy()
            trial[1:-1] += lam * du
            if config.clip_to_bounds:
                np.clip(trial, lo, hi, out=trial)
            if np.any(trial[1:-1] <= 0):
                saw_nonpositive = True
            else:
                t_res = _residual(trial, w_prev, dt, dx, p, delta)
                t_norm = float(np.abs(t_res).max())
                if t_norm < norm:
                    u, res, norm = trial, t_res, t_norm
                    accepted = True
                    break
            lam *= 0.5
        it += 1
        if not accepted:
            if saw_nonpositive:
                raise PositivityLostError("positivity lost", residual_norm=norm)
            raise NewtonConvergenceError(
                f"damped Newton stalled (residual {norm:.3e})", residual_norm=norm
            )
    return u, StepInfo(it, norm)


def step_implicit(u_n, dt: float, params: Params, bc: tuple[float, float], config: SolverConfig | None = None,
                  *, dx: float) -> np.ndarray:
    """One backward-Euler step with Dirichlet values ``bc`` at the new level."""
    u, _ = _newton_step(u_n, dt, params, bc, config or SolverConfig(), dx)
    return u


BoundaryData = Callable[[float], tuple[float, float]] | np.ndarray | None


def _boundary_values(bc: BoundaryData, grid: SpaceTimeGrid, u0: np.ndarray) -> np.ndarray:
    if bc is None:
        return np.tile([u0[0], u0[-1]], (grid.nt, 1))
    if callable(bc):
        return np.array([bc(float(t)) for t in grid.t], dtype=np.float64)
    arr = np.asarray(bc, dtype=np.float64)
    if arr.shape != (grid.nt, 2):
        raise ValueError(f"boundary trajectory must have shape ({grid.nt}, 2), got {arr.shape}")
    return arr


@dataclass
class SolveResult:
    u: GridFunction
    newton_iters: list[int] = field(default_factory=list)
    max_residual: float = 0.0

    def run_log(self) -> dict:
        return {"newton_iters": list(self.newton_iters), "max_residual": self.max_residual}


def solve(grid: SpaceTimeGrid, u0, bc: BoundaryData, params: Params, config: SolverConfig | None = None) -> SolveResult:
    """March from t_min to t_max on ``grid``.

    ``u0`` is an array of nx values or a callable of x. ``bc`` gives the
    (left, right) Dirichlet values: a callable of t, an (nt, 2) array, or None
    to freeze the endpoints of u0.
    """
    config = config or SolverConfig()
    u0 = np.asarray(u0(grid.x) if callable(u0) else u0, dtype=np.float64)
    if u0.shape != (grid.nx,):
        raise ValueError(f"initial data must have {grid.nx} entries")
    bvals = _boundary_values(bc, grid, u0)
    data = np.concatenate([u0, bvals.ravel()])
    if data.min() < params.m or data.max() > params.M:
        raise ValueError(f"initial/boundary data leave [m, M] = [{params.m}, {params.M}]")
    out = np.empty(grid.shape)
    out[0] = u0
    out[0, 0], out[0, -1] = bvals[0]
    iters: list[int] = []
    worst = 0.0
    for n in range(1, grid.nt):
        try:
            out[n], info = _newton_step(out[n - 1], grid.dt, params, bvals[n], config, grid.dx)
        except SolverError as exc:
            raise type(exc)(f"time index {n}: {exc}", residual_norm=exc.residual_norm, time_index=n) from exc
        iters.append(info.iterations)
        worst = max(worst, info.residual_norm)
    return SolveResult(GridFunction(grid, out), iters, worst)


def scheme_residual(u: GridFunction, params: Params) -> np.ndarray:
    """Pointwise residual of the implicit scheme at levels 1..nt-1, interior nodes.

    Shape (nt-1, nx-2); row n-1 corresponds to time level n.
    """
    g = u.grid
    delta = params.delta_for(g.dx)
    p = params.p
    w = u.values ** (p - 1)
    F = flux(np.diff(u.values[1:], axis=1) / g.dx, p, delta)
    return w[1:, 1:-1] - w[:-1, 1:-1] - g.dt * np.diff(F, axis=1) / g.dx


def weak_residual(u: GridFunction, testfn: GridFunction, params: Params) -> float:
    """Discrete version of the integral of -u^{p-1} d_t(phi) + |Du|^{p-2} Du . D(phi).

    The quadrature is the exact adjoint of the scheme: forward differences of
    u and phi paired on cell midpoints in space, and w^n paired with the
    forward time difference of phi. Summation by parts then gives
    weak_residual(u, phi) = sum_n sum_i phi^n_i * scheme_residual^n_i * dx
    to rounding, so the solver's own output scores zero.
    Positive values indicate supersolution behaviour against phi >= 0.
    """
    g = u.grid
    if testfn.grid != g:
        raise ValueError("test function lives on a different grid")
    phi = testfn.values
    if np.any(phi[0] != 0) or np.any(phi[-1] != 0) or np.any(phi[:, 0] != 0) or np.any(phi[:, -1] != 0):
        raise ValueError("test function support touches the boundary")
    p = params.p
    delta = params.delta_for(g.dx)
    w = u.values ** (p - 1)
    time_term = -np.sum(w[:-1] * np.diff(phi, axis=0)) * g.dx
    F = flux(np.diff(u.values, axis=1) / g.dx, p, delta)
    space_term = np.sum(F * np.diff(phi, axis=1)) * g.dt
    return float(time_term + space_term)


@dataclass
class ComparisonReport:
    max_violation: float
    location: tuple[int, int] | None

    @property
    def holds(self) -> bool:
        return self.max_violation <= 0.0


def comparison_check(u: GridFunction, v: GridFunction, boundary_tol: float = 0.0) -> ComparisonReport:
    """Largest interior excess of u over v, given u <= v on the parabolic boundary.

    Interior means every node off the bottom slice and the two lateral
    columns; the top slice counts as interior. Location is (time index,
    space index) of the lexicographically first maximizer.
    """
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    d = u.values - v.values
    boundary = np.zeros(d.shape, dtype=bool)
    boundary[0] = True
    boundary[:, 0] = True
    boundary[:, -1] = True
    bad = boundary & (d > boundary_tol)
    if bad.any():
        n, i = (int(k) for k in np.argwhere(bad)[0])
        raise ValueError(f"boundary ordering violated at node (n={n}, i={i}): excess {d[n, i]:.3e}")
    interior = d[1:, 1:-1]
    if interior.size == 0:
        return ComparisonReport(0.0, None)
    k = int(np.argmax(interior))
    n, i = np.unravel_index(k, interior.shape)
    worst = float(interior[n, i])
    if worst <= 0:
        return ComparisonReport(0.0, None)
    return ComparisonReport(worst, (int(n) + 1, int(i) + 1))


class TrudingerSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve`.

    Parameters
    ----------
    p, m, M, q, delta_reg
        Equation parameters, see :class:`Params`.
    newton_tol, newton_max_iter, damping, clip_to_bounds
        Nonlinear solver settings, see :class:`SolverConfig`.

    Attributes
    ----------
    solution_ : GridFunction
    newton_iters_ : list of int
    max_residual_ : float
    """

    def __init__(self, p=2.0, m=1.0, M=10.0, q=None, delta_reg=None, newton_tol=1e-10, newton_max_iter=50,
                 damping=1.0, clip_to_bounds=False):
        self.p = p
        self.m = m
        self.M = M
        self.q = q
        self.delta_reg = delta_reg
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        self.damping = damping
        self.clip_to_bounds = clip_to_bounds

    def params(self) -> Params:
        return Params(p=self.p, m=self.m, M=self.M, q=self.q, delta_reg=self.delta_reg)

    def config(self) -> SolverConfig:
        return SolverConfig(self.newton_tol, self.newton_max_iter, self.damping, self.clip_to_bounds)

    def fit(self, grid: SpaceTimeGrid, u0, bc: BoundaryData = None) -> "TrudingerSolver":
        result = solve(grid, u0, bc, self.params(), self.config())
        self.solution_ = result.u
        self.newton_iters_ = result.newton_iters
        self.max_residual_ = result.max_residual
        return self
