"""Anisotropic inf-convolution in space and time, its structure checks and error terms.

u_eps(x, t) = min over nodes (y, s) of
    u(y, s) + |y - x|^q / (q eps^(q-1)) + |s - t|^2 / (2 delta_eps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import map_blocks
from .grid import (
    GridFunction,
    ModulusOfContinuity,
    SpaceTimeGrid,
    optimal_modulus,
    oscillation,
    read_grid_function,
    write_grid_function,
)
from .solver import Params, flux, weak_residual


@dataclass(frozen=True)
class InfConvParams:
    epsilon: float
    delta_eps: float
    q: float = 2.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.delta_eps > 0:
            raise ValueError(f"delta_eps must be positive, got {self.delta_eps}")
        if not self.q > 1:
            raise ValueError(f"q must exceed 1, got {self.q}")

    def space_penalty(self, dist):
        return np.abs(dist) ** self.q / (self.q * self.epsilon ** (self.q - 1))

    def time_penalty(self, dist):
        return np.asarray(dist, dtype=np.float64) ** 2 / (2.0 * self.delta_eps)


def delta_from_modulus(omega_t: ModulusOfContinuity, epsilon: float, q: float, osc: float) -> float:
    """delta_eps = (omega_t^{-1}(eps^{q-1}))^2 / (2 osc)."""
    if not osc > 0:
        raise ValueError("oscillation must be positive")
    level = epsilon ** (q - 1)
    if level > omega_t.sup:
        raise ValueError("epsilon too large for modulus")
    if not omega_t.is_strictly_increasing_up_to(level):
        raise ValueError("time modulus is not strictly increasing on the range needed for inversion")
    s = float(omega_t.inverse(level))
    return s * s / (2.0 * osc)


def search_radii(params: InfConvParams, osc: float) -> tuple[float, float]:
    """(r(eps), t(eps)): beyond these distances no node can beat u(x, t) itself."""
    q = params.q
    r = (q * params.epsilon ** (q - 1) * osc) ** (1.0 / q)
    t = (2.0 * params.delta_eps * osc) ** 0.5
    return r, t


@dataclass
class InfConvResult:
    """Output of :func:`inf_convolve`.

    Index arrays ``argmin_i``/``argmin_n`` locate the minimizer of every node;
    ``xi_mask`` marks nodes whose inflated search window sits strictly inside
    the grid.
    """

    u_eps: GridFunction
    argmin_i: np.ndarray
    argmin_n: np.ndarray
    penalty_space: np.ndarray
    penalty_time: np.ndarray
    xi_mask: np.ndarray
    params: InfConvParams
    osc: float
    r_eps: float
    t_eps: float
    window: tuple[int, int]
    u: GridFunction | None = None

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.u_eps.grid

    @property
    def argmin_x(self) -> np.ndarray:
        return self.grid.x[self.argmin_i]

    @property
    def argmin_t(self) -> np.ndarray:
        return self.grid.t[self.argmin_n]

    @property
    def offset_i(self) -> np.ndarray:
        """Space index of each node minus that of its minimizer."""
        return np.arange(self.grid.nx)[None, :] - self.argmin_i

    @property
    def offset_n(self) -> np.ndarray:
        return np.arange(self.grid.nt)[:, None] - self.argmin_n

    def xi_bounds(self) -> dict:
        """Index box of the shrunken domain, inclusive bounds; empty box gives None."""
        rows = np.flatnonzero(self.xi_mask.any(axis=1))
        cols = np.flatnonzero(self.xi_mask.any(axis=0))
        if rows.size == 0 or cols.size == 0:
            return {"time": None, "space": None}
        return {"time": [int(rows[0]), int(rows[-1])], "space": [int(cols[0]), int(cols[-1])]}

    def reconstruction_error(self) -> float:
        """Largest relative gap in u_eps = u(x_eps, t_eps) + penalties."""
        if self.u is None:
            raise ValueError("original field not attached to this result")
        rebuilt = self.u.values[self.argmin_n, self.argmin_i] + self.penalty_space
        rebuilt = rebuilt + self.penalty_time
        scale = 1.0 + np.abs(self.u_eps.values).max()
        return float(np.abs(rebuilt - self.u_eps.values).max() / scale)


def _offsets(R: int, T: int) -> list[tuple[int, int]]:
    # smaller spatial offset, then smaller time offset, then lexicographic on
    # the minimizer's (time, space) index
    pairs = [(dn, di) for dn in range(-T, T + 1) for di in range(-R, R + 1)]
    return sorted(pairs, key=lambda o: (abs(o[1]), abs(o[0]), o[0], o[1]))


def _window(params: InfConvParams, grid: SpaceTimeGrid, osc: float) -> tuple[float, float, int, int]:
    r, te = search_radii(params, osc)
    if osc > 0 and r < grid.dx:
        raise ValueError("epsilon below grid resolution")
    # one extra node in each direction absorbs the discreteness of the grid
    R = min(int(np.floor(r / grid.dx * (1 + 1e-12))) + 1, grid.nx - 1)
    T = min(int(np.floor(te / grid.dt * (1 + 1e-12))) + 1, grid.nt - 1)
    return r, te, R, T


def inf_convolve(u: GridFunction, params: InfConvParams, method: str = "exhaustive",
                 threads: int | None = 1) -> InfConvResult:
    """Inf-convolution by window search over grid nodes.

    ``method="exhaustive"`` is the reference: every offset in the window is
    visited in tie-break order. ``method="separable"`` (q = 2 only) minimizes
    along space then time and reproduces the reference values exactly; its
    argmin arrays follow the same tie-break within each axis.
    """
    g = u.grid
    osc = oscillation(u)
    r, te, R, T = _window(params, g, osc)
    # penalties are tabulated once per lag so that values and reconstruction
    # use bit-identical addends
    ps_tab = params.space_penalty(np.arange(R + 1) * g.dx)
    pt_tab = params.time_penalty(np.arange(T + 1) * g.dt)
    if method == "separable":
        if params.q != 2:
            raise ValueError("separable pass requires q = 2")
        best, bi, bn = _separable(u, ps_tab, pt_tab)
    elif method == "exhaustive":
        best, bi, bn = _exhaustive(u, ps_tab, pt_tab, threads)
    else:
        raise ValueError(f"unknown method {method!r}")
    ps = ps_tab[np.abs(np.arange(g.nx)[None, :] - bi)]
    pt = pt_tab[np.abs(np.arange(g.nt)[:, None] - bn)]
    xi = np.zeros(g.shape, dtype=bool)
    if g.nt - 2 * T - 2 > 0 and g.nx - 2 * R - 2 > 0:
        xi[T + 1 : g.nt - T - 1, R + 1 : g.nx - R - 1] = True
    return InfConvResult(
        u_eps=GridFunction(g, best),
        argmin_i=bi,
        argmin_n=bn,
        penalty_space=ps,
        penalty_time=pt,
        xi_mask=xi,
        params=params,
        osc=osc,
        r_eps=r,
        t_eps=te,
        window=(R, T),
        u=u,
    )


def _exhaustive(u: GridFunction, ps_tab: np.ndarray, pt_tab: np.ndarray, threads):
    nt, nx = u.grid.shape
    R, T = ps_tab.size - 1, pt_tab.size - 1
    padded = np.full((nt + 2 * T, nx + 2 * R), np.inf)
    padded[T : T + nt, R : R + nx] = u.values
    offsets = _offsets(R, T)
    ps = [ps_tab[abs(di)] for _, di in offsets]
    pt = [pt_tab[abs(dn)] for dn, _ in offsets]

    def work(a: int, b: int):
        best = np.full((b - a, nx), np.inf)
        bi = np.zeros((b - a, nx), dtype=np.int64)
        bn = np.zeros((b - a, nx), dtype=np.int64)
        cols = np.arange(nx)
        rows = np.arange(a, b)[:, None]
        for (dn, di), s_pen, t_pen in zip(offsets, ps, pt):
            cand = padded[T + a + dn : T + b + dn, R + di : R + di + nx] + s_pen
            cand += t_pen
            better = cand < best
            if better.any():
                best[better] = cand[better]
                bi[better] = np.broadcast_to(cols + di, better.shape)[better]
                bn[better] = np.broadcast_to(rows + dn, better.shape)[better]
        return best, bi, bn

    parts = map_blocks(work, nt, threads)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def _separable(u: GridFunction, ps_tab: np.ndarray, pt_tab: np.ndarray):
    nt, nx = u.grid.shape
    R, T = ps_tab.size - 1, pt_tab.size - 1
    # space pass: v(s, x) = min_y u(s, y) + |y - x|^2 / (2 eps)
    pad_x = np.full((nt, nx + 2 * R), np.inf)
    pad_x[:, R : R + nx] = u.values
    v = np.full((nt, nx), np.inf)
    vi = np.zeros((nt, nx), dtype=np.int64)
    cols = np.arange(nx)
    for di in sorted(range(-R, R + 1), key=lambda d: (abs(d), d)):
        cand = pad_x[:, R + di : R + di + nx] + ps_tab[abs(di)]
        better = cand < v
        v[better] = cand[better]
        vi[better] = np.broadcast_to(cols + di, better.shape)[better]
    # time pass on v; the addition order (u + space) + time matches the reference
    pad_t = np.full((nt + 2 * T, nx), np.inf)
    pad_t[T : T + nt] = v
    pad_i = np.zeros((nt + 2 * T, nx), dtype=np.int64)
    pad_i[T : T + nt] = vi
    best = np.full((nt, nx), np.inf)
    bi = np.zeros((nt, nx), dtype=np.int64)
    bn = np.zeros((nt, nx), dtype=np.int64)
    rows = np.arange(nt)[:, None]
    for dn in sorted(range(-T, T + 1), key=lambda d: (abs(d), d)):
        cand = pad_t[T + dn : T + dn + nt] + pt_tab[abs(dn)]
        better = cand < best
        best[better] = cand[better]
        bi[better] = pad_i[T + dn : T + dn + nt][better]
        bn[better] = np.broadcast_to(rows + dn, better.shape)[better]
    return best, bi, bn


# --- structure checks --------------------------------------------------------


@dataclass
class PenaltyReport:
    time_margin: float
    space_margin: float
    violations: int
    worst_time_node: tuple[int, int] | None
    worst_space_node: tuple[int, int] | None
    nodes_checked: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_penalty_bounds(result: InfConvResult, omega_x: ModulusOfContinuity,
                         omega_t: ModulusOfContinuity | None = None) -> PenaltyReport:
    """Check both penalty bounds at every node of the shrunken domain.

    time:  |t - t_eps|^2 / (2 delta) <= eps^(q-1)
    space: |x - x_eps| <= q^(1/q) eps^((q-1)/q) omega_x(|x - x_eps|)^(1/q)

    Margins are bound minus measured, minimized over the nodes; ``omega_t`` is
    only needed to have produced delta_eps and is not consulted here.
    """
    del omega_t
    prm = result.params
    g = result.grid
    q, eps = prm.q, prm.epsilon
    mask = result.xi_mask
    slack = 1e-12 * (1.0 + np.abs(result.u_eps.values).max())
    lhs_t = result.penalty_time
    dist = np.abs(result.offset_i) * g.dx
    rhs_x = q ** (1 / q) * eps ** ((q - 1) / q) * omega_x(dist) ** (1 / q)
    m_t = eps ** (q - 1) - lhs_t
    m_x = rhs_x - dist
    if not mask.any():
        return PenaltyReport(np.inf, np.inf, 0, None, None, 0)
    bad = mask & ((m_t < -slack) | (m_x < -slack))
    mt = np.where(mask, m_t, np.inf)
    mx = np.where(mask, m_x, np.inf)
    wt = np.unravel_index(int(np.argmin(mt)), mt.shape)
    wx = np.unravel_index(int(np.argmin(mx)), mx.shape)
    return PenaltyReport(
        time_margin=float(mt[wt]),
        space_margin=float(mx[wx]),
        violations=int(bad.sum()),
        worst_time_node=(int(wt[0]), int(wt[1])),
        worst_space_node=(int(wx[0]), int(wx[1])),
        nodes_checked=int(mask.sum()),
    )


def semiconcavity_constant(result: InfConvResult) -> float:
    """C = (q - 1) r(eps)^(q-2) / eps^(q-1)."""
    q, eps = result.params.q, result.params.epsilon
    if q == 2:
        return 1.0 / eps
    return (q - 1) * result.r_eps ** (q - 2) / eps ** (q - 1)


@dataclass
class SemiconcavityReport:
    max_second_difference_x: float
    max_second_difference_t: float
    tol: float
    failures: int
    first_failure: tuple[int, int] | None

    @property
    def passed(self) -> bool:
        return self.failures == 0


def semiconcavity_check(result: InfConvResult) -> SemiconcavityReport:
    """Second differences of u_eps - C|x|^2 - t^2/delta must be <= tol on the shrunken domain.

    Coordinates are centred on the grid midpoint, which only subtracts an
    affine function and keeps the paraboloid small.
    """
    g = result.grid
    C = semiconcavity_constant(result)
    xc = g.x - 0.5 * (g.x_min + g.x_max)
    tc = g.t - 0.5 * (g.t_min + g.t_max)
    v = result.u_eps.values - C * xc[None, :] ** 2 - tc[:, None] ** 2 / result.params.delta_eps
    mask = result.xi_mask
    d2x = np.full(v.shape, -np.inf)
    d2t = np.full(v.shape, -np.inf)
    d2x[:, 1:-1] = v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]
    d2t[1:-1, :] = v[2:, :] - 2 * v[1:-1, :] + v[:-2, :]
    d2x = np.where(mask, d2x, -np.inf)
    d2t = np.where(mask, d2t, -np.inf)
    scale = 1.0 + (np.abs(v[mask]).max() if mask.any() else 0.0)
    tol = 1e-9 * scale
    bad = (d2x > tol) | (d2t > tol)
    first = tuple(int(k) for k in np.argwhere(bad)[0]) if bad.any() else None
    return SemiconcavityReport(
        max_second_difference_x=float(d2x.max()) if mask.any() else 0.0,
        max_second_difference_t=float(d2t.max()) if mask.any() else 0.0,
        tol=tol,
        failures=int(bad.sum()),
        first_failure=first,
    )


@dataclass
class Jet:
    theta: float
    eta: float
    fd_t: float
    fd_x: float
    time_constant: float
    space_constant: float
    second_difference: float
    hessian_bound: float
    hessian_bound_ok: bool


def jet_extract(result: InfConvResult, node: tuple[int, int]) -> Jet:
    """Closed-form derivatives of u_eps at a node from its minimizer.

    theta = (t - t_eps)/delta and eta = (x - x_eps)|x - x_eps|^(q-2)/eps^(q-1).
    The returned constants measure |centred difference - formula| in units of
    step * curvature (dt/delta in time, dx*C in space).
    """
    n, i = node
    g = result.grid
    if not (0 <= n < g.nt and 0 <= i < g.nx) or not result.xi_mask[n, i]:
        raise ValueError(f"node {node} lies outside the shrunken domain")
    prm = result.params
    q, eps, delta = prm.q, prm.epsilon, prm.delta_eps
    a = (i - result.argmin_i[n, i]) * g.dx
    s = (n - result.argmin_n[n, i]) * g.dt
    theta = s / delta
    eta = 0.0 if a == 0 else a * abs(a) ** (q - 2) / eps ** (q - 1)
    ue = result.u_eps.values
    fd_x = (ue[n, i + 1] - ue[n, i - 1]) / (2 * g.dx)
    fd_t = (ue[n + 1, i] - ue[n - 1, i]) / (2 * g.dt)
    C = semiconcavity_constant(result)
    d2 = (ue[n, i + 1] - 2 * ue[n, i] + ue[n, i - 1]) / g.dx**2
    pointwise = (q - 1) * abs(a) ** (q - 2) / eps ** (q - 1) if (a != 0 or q <= 2) else 0.0
    stencil = (abs(a + g.dx) ** q + abs(a - g.dx) ** q - 2 * abs(a) ** q) / (q * eps ** (q - 1) * g.dx**2)
    bound = max(pointwise, stencil)
    tol = 1e-9 * (1.0 + abs(bound) + abs(ue[n, i]) / g.dx**2)
    return Jet(
        theta=float(theta),
        eta=float(eta),
        fd_t=float(fd_t),
        fd_x=float(fd_x),
        time_constant=float(abs(fd_t - theta) / (g.dt / delta)),
        space_constant=float(abs(fd_x - eta) / (g.dx * C)),
        second_difference=float(d2),
        hessian_bound=float(bound),
        hessian_bound_ok=bool(d2 <= bound + tol),
    )


def elementary_inequality_check(a, s, p: float, m):
    """|(a+s)^((2-p)/2) - a^((2-p)/2)| <= (|p-2|/2) m^(-p/2) s, for a >= m > 0, s > 0.

    Vectorized over ``a``, ``s`` and ``m``. Returns (lhs, bound, ok).
    """
    a = np.asarray(a, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if np.any(m <= 0):
        raise ValueError("m must be positive")
    if np.any(a < m):
        raise ValueError("need a >= m")
    if np.any(s <= 0):
        raise ValueError("need s > 0")
    e = (2 - p) / 2
    lhs = np.abs((a + s) ** e - a**e)
    bound = abs(p - 2) / 2 * m ** (-p / 2) * s
    ok = lhs <= bound + 1e-14
    return lhs, bound, ok


# --- error model ----------------------------------------------------------------


@dataclass
class ErrorModel:
    """First-order error objects: the decreasing curve h and the size E_eps."""

    h: Callable[[np.ndarray], np.ndarray]
    E_eps: float
    C0: float
    h_table: tuple[np.ndarray, np.ndarray] = field(default_factory=lambda: (np.zeros(0), np.zeros(0)))


def error_model(omega_x: ModulusOfContinuity, epsilon: float, p: float, q: float, C: float = 1.0,
                C0: float | None = None) -> ErrorModel:
    """Build h(s) = omega_x^(1/2)(C0^2 / s) and E_eps for the branch of p.

    C0 defaults to (2 sup omega_x)^(1/2) for p >= 2 and (q sup omega_x)^(1/q)
    for p < 2, the caps of the displacement |x - x_eps| in each regime.
    """
    cap = omega_x.sup
    if C0 is None:
        C0 = (2 * cap) ** 0.5 if p >= 2 else (q * cap) ** (1 / q)
        if C0 == 0:
            C0 = 1.0

    def h(s):
        s = np.asarray(s, dtype=np.float64)
        with np.errstate(divide="ignore"):
            arg = np.where(s > 0, C0**2 / np.where(s > 0, s, 1.0), np.inf)
        return np.sqrt(np.where(np.isinf(arg), cap, omega_x(np.where(np.isinf(arg), 0.0, arg))))

    if p >= 2:
        E = C * max(float(np.sqrt(omega_x(C0 * epsilon**0.5))), epsilon)
    else:
        E = C * max(float(np.sqrt(omega_x(C0 * epsilon ** ((q - 1) / q)))), epsilon ** (q - 1))
    s_tab = np.concatenate([[0.0], np.logspace(-8, 8, 161)])
    return ErrorModel(h=h, E_eps=E, C0=float(C0), h_table=(s_tab, h(s_tab)))


def error_term_G(grad_norm, model: ErrorModel, p: float):
    """G = -E (|g|^p h(|g|) + |g|^max(0, p-2)), and 0 where g = 0."""
    g = np.asarray(grad_norm, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("gradient norm must be nonnegative")
    val = -model.E_eps * (g**p * model.h(g) + g ** max(0.0, p - 2))
    out = np.where(g > 0, val, 0.0)
    return out if out.ndim else float(out)


@dataclass
class AugmentedWeakReport:
    values: list[float]
    tolerances: list[float]
    min_margin: float

    @property
    def passed(self) -> bool:
        return self.min_margin >= 0


def augmented_weak_check(result: InfConvResult, model: ErrorModel, params: Params,
                         testfns: Iterable[GridFunction], c: float = 1.0) -> AugmentedWeakReport:
    """Weak supersolution test with the error term, over nonnegative test functions.

    Each value is weak_residual(u_eps, phi) - sum(phi * G(|Du_eps|)) dx dt; a
    test passes when value >= -c (dx + dt) |phi|_C1 * scale.
    """
    g = result.grid
    ue = result.u_eps
    grad = np.zeros(g.shape)
    grad[:, :-1] = np.abs(np.diff(ue.values, axis=1)) / g.dx
    G = error_term_G(grad, model, params.p)
    w = ue.values ** (params.p - 1)
    F = flux(np.diff(ue.values, axis=1) / g.dx, params.p, params.delta_for(g.dx))
    vals, tols, margins = [], [], []
    for phi in testfns:
        ph = phi.values
        if np.any(ph < 0):
            raise ValueError("test functions must be nonnegative")
        if np.any((ph != 0) & ~result.xi_mask):
            raise ValueError("test function support leaves the shrunken domain")
        v = weak_residual(ue, phi, params) - float(np.sum(ph * G)) * g.dx * g.dt
        c1 = np.abs(ph).max() + np.abs(np.diff(ph, axis=1)).max() / g.dx + np.abs(np.diff(ph, axis=0)).max() / g.dt
        support = np.count_nonzero(ph) * g.dx * g.dt
        scale = (np.abs(w).max() + np.abs(F).max()) * support
        tol = c * (g.dx + g.dt) * c1 * scale
        vals.append(float(v))
        tols.append(float(tol))
        margins.append(float(v + tol))
    return AugmentedWeakReport(vals, tols, min(margins) if margins else np.inf)


# --- estimator and serialization -----------------------------------------------------


class InfConvolution(TransformerMixin, BaseEstimator):
    """Inf-convolution as a transformer on GridFunctions.

    ``fit`` measures the oscillation and the space/time moduli and derives
    delta_eps (unless given); ``transform`` returns an :class:`InfConvResult`.

    Parameters
    ----------
    epsilon : float
    q : float
    delta_eps : float or None
        None selects the modulus rule.
    omega_t : ModulusOfContinuity or None
        Time modulus used by the rule; None measures it from the data.
    method : {"exhaustive", "separable"}
    threads : int or None
    """

    def __init__(self, epsilon=0.1, q=2.0, delta_eps=None, omega_t=None, method="exhaustive", threads=1):
        self.epsilon = epsilon
        self.q = q
        self.delta_eps = delta_eps
        self.omega_t = omega_t
        self.method = method
        self.threads = threads

    def fit(self, u: GridFunction, y=None) -> "InfConvolution":
        if not isinstance(u, GridFunction):
            raise TypeError("InfConvolution expects a GridFunction")
        self.osc_ = oscillation(u)
        self.omega_x_ = optimal_modulus(u, None, "space")
        self.omega_t_ = self.omega_t if self.omega_t is not None else optimal_modulus(u, None, "time")
        if self.delta_eps is not None:
            self.delta_eps_ = float(self.delta_eps)
        else:
            self.delta_eps_ = delta_from_modulus(self.omega_t_, self.epsilon, self.q, self.osc_)
        return self

    def transform(self, u: GridFunction) -> InfConvResult:
        check_is_fitted(self, "delta_eps_")
        return inf_convolve(u, InfConvParams(self.epsilon, self.delta_eps_, self.q), self.method, self.threads)


def write_inf_convolution(stem: str | Path, result: InfConvResult) -> list[Path]:
    """Write ``<stem>.values.txt``, ``<stem>.offsets.txt`` and ``<stem>.json``.

    The offsets file stacks the space-index offsets (first nt rows) over the
    time-index offsets (last nt rows) on a grid of 2*nt rows whose time axis is
    the row counter.
    """
    stem = Path(stem)
    g = result.grid
    paths = [stem.with_suffix(".values.txt"), stem.with_suffix(".offsets.txt"), stem.with_suffix(".json")]
    write_grid_function(paths[0], result.u_eps)
    planes = SpaceTimeGrid(g.x_min, g.x_max, 0.0, float(2 * g.nt - 1), g.nx, 2 * g.nt)
    write_grid_function(paths[1], GridFunction(planes, np.vstack([result.offset_i, result.offset_n]).astype(float)))
    meta = {
        "epsilon": result.params.epsilon,
        "delta_eps": result.params.delta_eps,
        "q": result.params.q,
        "osc": result.osc,
        "xi_eps_bounds": result.xi_bounds(),
    }
    paths[2].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_inf_convolution(stem: str | Path) -> InfConvResult:
    stem = Path(stem)
    u_eps = read_grid_function(stem.with_suffix(".values.txt"))
    planes = read_grid_function(stem.with_suffix(".offsets.txt"))
    meta = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    g = u_eps.grid
    if planes.grid.nx != g.nx or planes.grid.nt != 2 * g.nt:
        raise ValueError("offset planes do not match the value grid")
    off_i = planes.values[: g.nt].astype(np.int64)
    off_n = planes.values[g.nt :].astype(np.int64)
    prm = InfConvParams(meta["epsilon"], meta["delta_eps"], meta["q"])
    r, te, R, T = _window(prm, g, meta["osc"])
    xi = np.zeros(g.shape, dtype=bool)
    b = meta["xi_eps_bounds"]
    if b["time"] is not None:
        xi[b["time"][0] : b["time"][1] + 1, b["space"][0] : b["space"][1] + 1] = True
    return InfConvResult(
        u_eps=u_eps,
        argmin_i=np.arange(g.nx)[None, :] - off_i,
        argmin_n=np.arange(g.nt)[:, None] - off_n,
        penalty_space=prm.space_penalty(off_i * g.dx),
        penalty_time=prm.time_penalty(off_n * g.dt),
        xi_mask=xi,
        params=prm,
        osc=meta["osc"],
        r_eps=r,
        t_eps=te,
        window=(R, T),
    )
