"""Energy diagnostics: cutoffs, Caccioppoli ratios, Cauchy distances of gradients, vector inequalities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._parallel import map_blocks
from .grid import Cylinder, GridFunction, SpaceTimeGrid, region_box
from .infconv import ErrorModel, InfConvResult, elementary_inequality_check, error_term_G
from .solver import Params


def _smoothstep_profile(n: int, margin: int, ramp: int) -> np.ndarray:
    k = np.arange(n)
    d = np.minimum(k, n - 1 - k)
    s = np.clip((d - margin + 1) / (ramp + 1), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass
class CutoffFunction:
    """Tensor-product smoothstep cutoff; zero on ``margin`` nodes at every edge of its box.

    ``ramp`` nodes carry the transition, which spans (ramp + 1) grid steps.
    """

    xi: GridFunction
    margin: tuple[int, int]
    ramp: tuple[int, int]

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.xi.grid

    @property
    def ramp_width(self) -> tuple[float, float]:
        """(space, time) physical width of the transition."""
        return ((self.ramp[0] + 1) * self.grid.dx, (self.ramp[1] + 1) * self.grid.dt)

    def max_gradient(self) -> tuple[float, float]:
        v = self.xi.values
        return (
            float(np.abs(np.diff(v, axis=1)).max() / self.grid.dx),
            float(np.abs(np.diff(v, axis=0)).max() / self.grid.dt),
        )


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def build_cutoff(grid: SpaceTimeGrid, margin_nodes, ramp_nodes=None, region: Cylinder | None = None) -> CutoffFunction:
    """Cutoff equal to 1 on a central plateau of ``region`` and 0 on its margins.

    ``margin_nodes`` and ``ramp_nodes`` take an int or a (space, time) pair;
    the ramp defaults to the margin.
    """
    margin = _pair(margin_nodes)
    ramp = _pair(ramp_nodes if ramp_nodes is not None else margin_nodes)
    if min(margin) < 1:
        raise ValueError("cutoff margin must be at least one node")
    if min(ramp) < 1:
        raise ValueError("cutoff ramp must be at least one node")
    ts, xs = region_box(grid, region)
    nx, nt = xs.stop - xs.start, ts.stop - ts.start
    for n, m, w, axis in ((nx, margin[0], ramp[0], "space"), (nt, margin[1], ramp[1], "time")):
        if n - 1 < 2 * (m + w):
            raise ValueError(f"margin too large: {axis} extent of {n} nodes leaves no plateau")
    values = np.zeros(grid.shape)
    values[ts, xs] = np.outer(_smoothstep_profile(nt, margin[1], ramp[1]), _smoothstep_profile(nx, margin[0], ramp[0]))
    cut = CutoffFunction(GridFunction(grid, values), margin, ramp)
    gx, gt = cut.max_gradient()
    wx, wt = cut.ramp_width
    assert gx <= 2.0 / wx * (1 + 1e-12) and gt <= 2.0 / wt * (1 + 1e-12)
    return cut


def _time_weights(nt: int, dt: float) -> np.ndarray:
    w = np.full(nt, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _space_weights(nx: int, dx: float) -> np.ndarray:
    w = np.full(nx, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def forward_gradient(u: GridFunction) -> np.ndarray:
    """(u_{i+1} - u_i)/dx on cell midpoints, shape (nt, nx-1)."""
    return np.diff(u.values, axis=1) / u.grid.dx


@dataclass
class EnergyReport:
    lhs: float
    rhs_raw: float
    ratio: float
    constant_used: float | None
    passed: bool
    g_contribution: float
    g_flag: bool


def caccioppoli_check(u: GridFunction, xi: CutoffFunction, params: Params, model: ErrorModel | None = None,
                      constant: float | None = None) -> EnergyReport:
    """Compare int |Du|^p xi^p with int (|d_t xi^p| + |D xi|^p + xi^p).

    Space derivatives live on cell midpoints (midpoint rule in x, trapezoid in
    t); the time derivative lives on half levels (midpoint in t, trapezoid in
    x); xi^p itself uses the 2-D trapezoid rule. ``g_flag`` marks runs where
    int (M - u) xi^p |G(|Du|)| exceeds 10% of the right-hand side.
    """
    g = u.grid
    if xi.grid != g:
        raise ValueError("cutoff and field live on different grids")
    p = params.p
    xp = xi.xi.values ** p
    support = xp > 0
    if np.any(u.values[support] < 0) or np.any(u.values[support] > params.M):
        raise ValueError("field leaves [0, M] on the cutoff support")
    wt = _time_weights(g.nt, g.dt)
    wx = _space_weights(g.nx, g.dx)
    xp_mid = 0.5 * (xp[:, 1:] + xp[:, :-1])
    Du = forward_gradient(u)
    lhs = float(np.sum(wt[:, None] * np.abs(Du) ** p * xp_mid) * g.dx)
    Dxi = np.diff(xi.xi.values, axis=1) / g.dx
    grad_term = float(np.sum(wt[:, None] * np.abs(Dxi) ** p) * g.dx)
    dt_term = float(np.sum(np.abs(np.diff(xp, axis=0)) / g.dt * wx[None, :]) * g.dt)
    mass = float(np.sum(wt[:, None] * wx[None, :] * xp))
    rhs = grad_term + dt_term + mass
    g_contrib = 0.0
    if model is not None:
        G = error_term_G(np.abs(Du), model, p)
        weight = (params.M - 0.5 * (u.values[:, 1:] + u.values[:, :-1])) * xp_mid
        g_contrib = float(np.sum(wt[:, None] * weight * np.abs(G)) * g.dx)
    ratio = lhs / rhs if rhs > 0 else 0.0
    passed = True if constant is None else ratio <= constant
    return EnergyReport(lhs, rhs, ratio, constant, passed, g_contrib, g_contrib > 0.1 * rhs)


def default_family_cutoff(family: Sequence[InfConvResult]) -> CutoffFunction:
    """Cutoff over the shrunken domain of the coarsest member, ramps one sixth of the box."""
    b = family[0].xi_bounds()
    if b["time"] is None:
        raise ValueError("shrunken domain of the coarsest member is empty")
    box = (slice(b["time"][0], b["time"][1] + 1), slice(b["space"][0], b["space"][1] + 1))
    nt, nx = b["time"][1] - b["time"][0] + 1, b["space"][1] - b["space"][0] + 1
    return build_cutoff(family[0].grid, 1, (max(1, nx // 6), max(1, nt // 6)), region=box)


@dataclass
class UniformityReport:
    ratios: np.ndarray
    slack: float

    @property
    def excess(self) -> float:
        """max ratio over the family / max over its first half (rounded up)."""
        head = self.ratios[: -(-len(self.ratios) // 2)]
        return float(self.ratios.max() / head.max()) if head.max() > 0 else 1.0

    @property
    def passed(self) -> bool:
        return self.excess <= 1 + self.slack


def caccioppoli_uniformity(family: Sequence[InfConvResult], params: Params, xi: CutoffFunction | None = None,
                           slack: float = 0.05) -> UniformityReport:
    """Caccioppoli ratios along a family ordered by decreasing epsilon."""
    xi = default_family_cutoff(family) if xi is None else xi
    ratios = np.array([caccioppoli_check(f.u_eps, xi, params).ratio for f in family])
    return UniformityReport(ratios, slack)


@dataclass
class CauchyReport:
    distances: np.ndarray
    consecutive: np.ndarray
    slack: float

    @property
    def passed(self) -> bool:
        d = self.consecutive
        return bool(np.all(d[1:] <= (1 + self.slack) * d[:-1] + 1e-14))


def cauchy_gradient_diagnostic(family: Sequence[InfConvResult], r: float, p: float,
                               region: np.ndarray | None = None, slack: float = 0.05) -> CauchyReport:
    """Pairwise L^r distances between forward-difference gradients of a family.

    ``family`` is ordered by decreasing epsilon. ``region`` is a node mask;
    by default the intersection of the members' shrunken domains. A cell
    midpoint counts when both its nodes are in the region.
    """
    if not (1 < r < p):
        raise ValueError(f"need 1 < r < p, got r={r}, p={p}")
    if len(family) < 3:
        raise ValueError("need at least three family members")
    g = family[0].grid
    if any(f.grid != g for f in family):
        raise ValueError("family members live on different grids")
    if region is None:
        region = np.logical_and.reduce([f.xi_mask for f in family])
    cells = region[:, 1:] & region[:, :-1]
    wt = _time_weights(g.nt, g.dt)[:, None] * g.dx
    grads = [forward_gradient(f.u_eps) for f in family]
    k = len(family)
    D = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            diff = np.abs(grads[a] - grads[b]) ** r
            D[a, b] = D[b, a] = float(np.sum(np.where(cells, diff * wt, 0.0))) ** (1 / r)
    consecutive = np.array([D[j, j + 1] for j in range(k - 1)])
    return CauchyReport(D, consecutive, slack)


# --- vector inequalities ---------------------------------------------------------


def _power_field(a: np.ndarray, p: float) -> np.ndarray:
    """|a|^(p-2) a, with 0 at a = 0."""
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n > 0, n ** (p - 2) * a, 0.0)
    return out


def vector_inequality_margins(a, b, p: float) -> dict[str, np.ndarray | None]:
    """Signed margins (>= 0 means satisfied, slack included) of the four inequalities.

    Only the branch matching p is evaluated; the other two entries are None.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dist = np.linalg.norm(a - b, axis=-1)
    slack = 1e-12 * (1 + na + nb) ** p
    fa, fb = _power_field(a, p), _power_field(b, p)
    mono = np.sum((fa - fb) * (a - b), axis=-1)
    gap = np.linalg.norm(fa - fb, axis=-1)
    out: dict[str, np.ndarray | None] = {"ineq1": None, "ineq2": None, "ineq3": None, "ineq4": None}
    if p >= 2:
        out["ineq1"] = mono - 2 ** (2 - p) * dist**p + slack
        coef = na ** (p - 2) + nb ** (p - 2)
        out["ineq4"] = (p - 1) * coef * dist - gap + slack
    else:
        out["ineq2"] = mono - (p - 1) * dist**2 * (1 + na**2 + nb**2) ** ((p - 2) / 2) + slack
        out["ineq3"] = 2 ** (2 - p) * dist ** (p - 1) - gap + slack
    return out


@dataclass
class VectorInequalityReport:
    ineq1: bool | None
    ineq2: bool | None
    ineq3: bool | None
    ineq4: bool | None
    violations: dict[str, int]

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def vector_inequality_check(a, b, p: float) -> VectorInequalityReport:
    """Evaluate the monotonicity and continuity inequalities of |a|^(p-2) a.

    ``a`` and ``b`` are vectors or stacks of vectors (last axis = components).
    """
    margins = vector_inequality_margins(a, b, p)
    flags: dict[str, bool | None] = {}
    counts: dict[str, int] = {}
    for name, m in margins.items():
        if m is None:
            flags[name] = None
        else:
            counts[name] = int(np.count_nonzero(m < 0))
            flags[name] = counts[name] == 0
    return VectorInequalityReport(flags["ineq1"], flags["ineq2"], flags["ineq3"], flags["ineq4"], counts)


def monte_carlo_battery(p: float, n_samples: int, seed: int, dim: int = 2, chunk: int = 100_000,
                        threads: int | None = 1) -> dict[str, int]:
    """Violation counts of the vector inequalities and the elementary power inequality.

    Samples are drawn chunk by chunk from generators seeded by (seed, p, chunk
    index), so counts do not depend on ``threads``. Vector components are
    uniform in [-10, 10]; the power inequality draws m in [0.1, 3],
    a in [m, m + 10] and s in (0, 1).
    """
    n_chunks = -(-n_samples // chunk)
    p_key = int(round(p * 1_000_000))

    def work(start: int, stop: int) -> dict[str, int]:
        counts: dict[str, int] = {}
        for c in range(start, stop):
            size = min(chunk, n_samples - c * chunk)
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(p_key, c)))
            a = rng.uniform(-10, 10, (size, dim))
            b = rng.uniform(-10, 10, (size, dim))
            for name, m in vector_inequality_margins(a, b, p).items():
                if m is not None:
                    counts[name] = counts.get(name, 0) + int(np.count_nonzero(m < 0))
            m_lo = rng.uniform(0.1, 3.0, size)
            a_s = m_lo + rng.uniform(0.0, 10.0, size)
            s = rng.uniform(0.0, 1.0, size)
            s = np.where(s > 0, s, 0.5)  # uniform may return exactly 0
            _, _, ok = elementary_inequality_check(a_s, s, p, m_lo)
            counts["elementary"] = counts.get("elementary", 0) + int(np.count_nonzero(~ok))
        return counts

    total: dict[str, int] = {}
    for part in map_blocks(work, n_chunks, threads):
        for k, v in part.items():
            total[k] = total.get(k, 0) + v
    return dict(sorted(total.items()))
