"""Regularity measurements on grid functions.

Pair-scan Lipschitz and Hölder constants, the doubled-variable auxiliary
function Ψ with its φ profiles, and a bisection certificate for the smallest
admissible Lipschitz multiplier.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._parallel import map_blocks
from .grid import Cylinder, GridFunction, Region, SpaceTimeGrid, lag_differences, oscillation, region_box


# --- pair-scan constants ------------------------------------------------------

def lipschitz_constant(u: GridFunction, region: Region = None) -> float:
    """Largest same-time difference quotient |u(x,t) - u(y,t)| / |x - y|."""
    raw = lag_differences(u, region, "space")
    lags = np.arange(1, raw.size) * u.grid.dx
    return float((raw[1:] / lags).max())


def holder_constant(u: GridFunction, region: Region, alpha: float) -> float:
    """Largest same-time quotient |u(x,t) - u(y,t)| / |x - y|^alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    raw = lag_differences(u, region, "space")
    lags = np.arange(1, raw.size) * u.grid.dx
    return float((raw[1:] / lags**alpha).max())


def time_holder_constant(u: GridFunction, region: Region = None) -> float:
    """Largest same-position quotient |u(x,t) - u(x,s)| / |t - s|^(1/2)."""
    raw = lag_differences(u, region, "time")
    lags = np.arange(1, raw.size) * u.grid.dt
    return float((raw[1:] / np.sqrt(lags)).max())


def combined_constant(u: GridFunction, region: Region = None, window: tuple[int, int] | None = None) -> float:
    """Largest |u(x,t) - u(y,s)| / (|x - y| + |t - s|^(1/2)) over node pairs.

    ``window`` caps the (space, time) index lags scanned; the default is the
    full region.
    """
    ts, xs = region_box(u.grid, region)
    block = u.values[ts, xs]
    nt, nx = block.shape
    max_di, max_dn = (nx - 1, nt - 1) if window is None else (min(window[0], nx - 1), min(window[1], nt - 1))
    dx, dt = u.grid.dx, u.grid.dt
    best = 0.0
    for dn in range(max_dn + 1):
        later, earlier = block[dn:], block[: nt - dn]
        root = np.sqrt(dn * dt)
        for di in range(-max_di, max_di + 1):
            if dn == 0 and di <= 0:
                continue
            if di >= 0:
                diff = later[:, di:] - earlier[:, : nx - di]
            else:
                diff = later[:, : nx + di] - earlier[:, -di:]
            q = np.abs(diff).max() / (abs(di) * dx + root)
            if q > best:
                best = float(q)
    return best


def fitted_time_exponent(u: GridFunction, region: Region = None) -> float:
    """Least-squares slope of log sup_x |u(x,t) - u(x,s)| against log |t - s| over dyadic lags.

    NaN when fewer than two lags carry a nonzero increment.
    """
    raw = lag_differences(u, region, "time")
    lags = 2 ** np.arange(int(np.log2(raw.size - 1)) + 1)
    keep = raw[lags] > 0
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(lags[keep] * u.grid.dt), np.log(raw[lags][keep]), 1)
    return float(slope)


# --- φ profiles ---------------------------------------------------------------

@dataclass(frozen=True)
class PhiProfile:
    """Concave modulus profile φ with its first two derivatives."""

    kind: str
    alpha: float | None = None
    kappa: float | None = None
    beta: float | None = None
    funcs: tuple[Callable, Callable, Callable] | None = field(default=None, compare=False, repr=False)

    @classmethod
    def holder(cls, alpha: float) -> "PhiProfile":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        return cls("holder", alpha=alpha)

    @classmethod
    def lipschitz(cls, alpha: float = 0.5, kappa: float | None = None, beta: float | None = None) -> "PhiProfile":
        """φ(s) = s - κ s^β, by default β = α/2 + 1 and κ = 2^(-β-1) / β."""
        beta = alpha / 2 + 1 if beta is None else beta
        kappa = 2.0 ** (-beta - 1) / beta if kappa is None else kappa
        return cls("lipschitz", alpha=alpha, kappa=kappa, beta=beta)

    @classmethod
    def custom(cls, phi: Callable, dphi: Callable, d2phi: Callable, name: str = "custom") -> "PhiProfile":
        return cls(name, funcs=(phi, dphi, d2phi))

    def phi(self, s):
        s = np.asarray(s, dtype=float)
        if self.funcs is not None:
            return self.funcs[0](s)
        if self.kind == "holder":
            return s**self.alpha
        return s - self.kappa * s**self.beta

    def dphi(self, s):
        s = np.asarray(s, dtype=float)
        if self.funcs is not None:
            return self.funcs[1](s)
        if self.kind == "holder":
            return self.alpha * s ** (self.alpha - 1)
        return 1.0 - self.kappa * self.beta * s ** (self.beta - 1)

    def d2phi(self, s):
        s = np.asarray(s, dtype=float)
        if self.funcs is not None:
            return self.funcs[2](s)
        if self.kind == "holder":
            return self.alpha * (self.alpha - 1) * s ** (self.alpha - 2)
        return -self.kappa * self.beta * (self.beta - 1) * s ** (self.beta - 2)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "kappa": self.kappa, "beta": self.beta}


@dataclass(frozen=True)
class PhiCertificate:
    phi_at_zero: float
    curvature_margin: float
    concavity_margin: float
    c_phi: float

    @property
    def passed(self) -> bool:
        return (self.phi_at_zero == 0.0 and self.curvature_margin > 0
                and self.concavity_margin > 0 and self.c_phi > 0)


CERTIFY_GRID = 2.0 ** np.linspace(-20.0, 1.0, 211)


def certify_phi(profile: PhiProfile) -> PhiCertificate:
    """Check φ(0) = 0, |φ''| < φ'/s, and φ'' < 0 < φ' on a log grid of (0, 2].

    Margins are the worst case over the grid; ``c_phi`` is min φ'.
    """
    s = CERTIFY_GRID
    d1, d2 = profile.dphi(s), profile.d2phi(s)
    return PhiCertificate(
        phi_at_zero=float(profile.phi(0.0)),
        curvature_margin=float((d1 / s - np.abs(d2)).min()),
        concavity_margin=float((-d2).min()),
        c_phi=float(d1.min()),
    )


# --- Ψ scans -------------------------------------------------------------------

UNIT_CYLINDER = Cylinder(1.0)
HALF_CYLINDER = Cylinder(0.5)


@dataclass(frozen=True)
class PsiSpec:
    L: float
    K: float
    x0: float
    y0: float
    t0: float
    profile: PhiProfile

    def __post_init__(self) -> None:
        if not self.L > 0 or self.K < 0:
            raise ValueError(f"need L > 0 and K >= 0, got L={self.L}, K={self.K}")


@dataclass(frozen=True)
class PsiMax:
    max_value: float
    argmax: tuple[float, float, float]


def _inside(c: Cylinder, x: float, t: float) -> bool:
    tol = 1e-12 * max(1.0, c.r)
    return abs(x - c.center_x) <= c.r + tol and c.top_t - c.r < t <= c.top_t + tol


def _check_base(x0: float, y0: float, t0: float, cylinder: Cylinder) -> None:
    inner = Cylinder(cylinder.r / 2, cylinder.center_x, cylinder.top_t)
    if not (_inside(inner, x0, t0) and _inside(inner, y0, t0)):
        raise ValueError(f"base point ({x0}, {y0}, {t0}) outside the half cylinder")


class _PairTable:
    """Time-maximized pair table B(x, y) = max_t [u(x,t) - u(y,t) - K/2 (t - t0)^2].

    The φ and base-point terms do not depend on t, so every L and every
    spatial base point can reuse one table per (K, t0).
    """

    def __init__(self, u: GridFunction, cylinder: Cylinder, K: float, t0: float, threads: int | None = 1):
        ts, xs = region_box(u.grid, cylinder)
        block = u.values[ts, xs]
        t = u.grid.t[ts] - t0
        self.x = u.grid.x[xs]
        self.t = u.grid.t[ts]
        nx = block.shape[1]

        def scan(a: int, b: int):
            best = np.full((nx, nx), -np.inf)
            arg = np.zeros((nx, nx), dtype=np.int64)
            for n in range(a, b):
                cand = block[n][:, None] - block[n][None, :] - 0.5 * K * t[n] ** 2
                upd = cand > best
                best[upd] = cand[upd]
                arg[upd] = n
            return best, arg

        parts = map_blocks(scan, block.shape[0], threads)
        best, arg = parts[0]
        for b, a in parts[1:]:
            upd = b > best
            best = np.where(upd, b, best)
            arg = np.where(upd, a, arg)
        self.best, self.arg = best, arg
        self.dist = np.abs(self.x[:, None] - self.x[None, :])

    def evaluate(self, L: float, K: float, x0: float, y0: float, profile: PhiProfile) -> PsiMax:
        field_ = (self.best - L * profile.phi(self.dist)
                  - 0.5 * K * ((self.x[:, None] - x0) ** 2 + (self.x[None, :] - y0) ** 2))
        flat = int(np.argmax(field_))
        i, j = divmod(flat, field_.shape[1])
        return PsiMax(float(field_[i, j]), (float(self.x[i]), float(self.x[j]), float(self.t[self.arg[i, j]])))


def psi_max(u: GridFunction, spec: PsiSpec, cylinder: Cylinder = UNIT_CYLINDER, threads: int | None = 1) -> PsiMax:
    """Exhaustive maximum of Ψ over node triples (x, y, t) of ``cylinder``.

    Ψ = u(x,t) - u(y,t) - L φ(|x-y|) - K/2 (|x-x0|² + |y-y0|² + |t-t0|²).
    Ties resolve to the lexicographically first (x, y, t) triple.
    """
    _check_base(spec.x0, spec.y0, spec.t0, cylinder)
    table = _PairTable(u, cylinder, spec.K, spec.t0, threads)
    return table.evaluate(spec.L, spec.K, spec.x0, spec.y0, spec.profile)


@dataclass
class LCertificate:
    L_star: float
    max_psi_at_L_star: float
    per_base: list[float]
    bracket: tuple[float, float]
    iterations: int


class BracketError(ValueError):
    def __init__(self, L_hi: float, value: float):
        super().__init__(f"max psi is {value:.3e} > 0 at the upper bracket L_hi={L_hi:.6g}")
        self.L_hi = L_hi


def default_upper_bracket(u: GridFunction, profile: PhiProfile, cylinder: Cylinder = UNIT_CYLINDER) -> float:
    """L above every same-time quotient |u(x,t) - u(y,t)| / φ(|x - y|), so Ψ <= 0."""
    raw = lag_differences(u, cylinder, "space")
    phi = profile.phi(np.arange(1, raw.size) * u.grid.dx)
    top = float((raw[1:] / phi).max())
    return 1.01 * top if top > 0 else 1.0


def default_base_points(grid: SpaceTimeGrid, n_space: int = 9, n_time: int = 3,
                        cylinder: Cylinder = UNIT_CYLINDER) -> list[tuple[float, float, float]]:
    """Neighbouring node pairs (x0, x0 ± dx) spread over the half cylinder.

    Both orders are included so that decreasing and increasing stretches are probed.
    """
    half = cylinder.r / 2
    x, t = grid.x, grid.t
    xs = np.flatnonzero(np.abs(x - cylinder.center_x) <= half - grid.dx + 1e-9 * grid.dx)
    tt = np.flatnonzero((t > cylinder.top_t - half) & (t <= cylinder.top_t + 1e-9 * grid.dt))
    if xs.size == 0 or tt.size == 0:
        raise ValueError("grid too coarse for base points in the half cylinder")
    pick_x = xs[np.unique(np.linspace(0, xs.size - 1, n_space).round().astype(int))]
    pick_t = tt[np.unique(np.linspace(0, tt.size - 1, n_time).round().astype(int))]
    out = []
    for n in pick_t:
        for i in pick_x:
            out.append((float(x[i]), float(x[i + 1]), float(t[n])))
            out.append((float(x[i + 1]), float(x[i]), float(t[n])))
    return out


def minimal_L_certificate(u: GridFunction, profile: PhiProfile, K: float,
                          base_points: Sequence[tuple[float, float, float]],
                          L_lo: float = 0.0, L_hi: float | None = None,
                          cylinder: Cylinder = UNIT_CYLINDER, threads: int | None = 1) -> LCertificate:
    """Smallest L (to 1e-3 of the bracket) with max Ψ <= 0 at every base point."""
    if not certify_phi(profile).passed:
        raise ValueError(f"profile {profile.kind!r} fails the admissibility conditions")
    if not base_points:
        raise ValueError("at least one base point is required")
    for x0, y0, t0 in base_points:
        _check_base(x0, y0, t0, cylinder)
    if L_hi is None:
        L_hi = default_upper_bracket(u, profile, cylinder)
    if not L_hi > L_lo:
        raise ValueError(f"empty bracket [{L_lo}, {L_hi}]")

    tables = {t0: _PairTable(u, cylinder, K, t0, threads) for t0 in sorted({b[2] for b in base_points})}

    def per_base(L: float) -> list[float]:
        return [tables[t0].evaluate(L, K, x0, y0, profile).max_value for x0, y0, t0 in base_points]

    top = max(per_base(L_hi))
    if top > 0:
        raise BracketError(L_hi, top)
    lo, hi = L_lo, L_hi
    tol = 1e-3 * (L_hi - L_lo)
    iterations = 0
    if max(per_base(lo)) <= 0:
        hi = lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if max(per_base(mid)) <= 0:
            hi = mid
        else:
            lo = mid
        iterations += 1
    values = per_base(hi)
    return LCertificate(hi, max(values), values, (L_lo, L_hi), iterations)


# --- reports ------------------------------------------------------------------

def normalize_to_unit(u: GridFunction, cylinder: Cylinder) -> GridFunction:
    """Rescale ``cylinder`` onto B_1 x (-1, 0] by x -> (x - c)/r, t -> (t - top)/r."""
    ts, xs = region_box(u.grid, cylinder)
    g = u.grid.sub_grid(ts, xs)
    c, r, top = cylinder.center_x, cylinder.r, cylinder.top_t
    scaled = SpaceTimeGrid((g.x_min - c) / r, (g.x_max - c) / r, (g.t_min - top) / r, (g.t_max - top) / r, g.nx, g.nt)
    return GridFunction(scaled, u.values[ts, xs])


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


@dataclass
class RegularityReport:
    lipschitz_L: float
    holder_C: dict[float, float]
    time_holder_C: float
    combined_C: float
    fitted_time_exponent: float
    psi_certificate: dict

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


class RegularityMeter(BaseEstimator):
    """Measures all regularity constants of a grid function on the unit cylinder.

    The input is expected in normalized coordinates (see ``normalize_to_unit``).
    """

    def __init__(self, alphas=(0.5,), profile: str = "lipschitz", profile_alpha: float = 0.5,
                 K: float | None = None, base_points=None, combined_window=None, threads: int | None = 1):
        self.alphas = alphas
        self.profile = profile
        self.profile_alpha = profile_alpha
        self.K = K
        self.base_points = base_points
        self.combined_window = combined_window
        self.threads = threads

    def _profile(self) -> PhiProfile:
        if self.profile == "lipschitz":
            return PhiProfile.lipschitz(self.profile_alpha)
        if self.profile == "holder":
            return PhiProfile.holder(self.profile_alpha)
        raise ValueError(f"unknown profile {self.profile!r}")

    def fit(self, u: GridFunction, y=None) -> "RegularityMeter":
        cyl = UNIT_CYLINDER
        profile = self._profile()
        K = 8.0 * oscillation(u, cyl) if self.K is None else self.K
        K = K if K > 0 else 1.0
        bases = self.base_points if self.base_points is not None else default_base_points(u.grid, cylinder=cyl)
        cert = minimal_L_certificate(u, profile, K, bases, cylinder=cyl, threads=self.threads)
        self.K_ = K
        self.certificate_ = cert
        self.report_ = RegularityReport(
            lipschitz_L=lipschitz_constant(u, cyl),
            holder_C={float(a): holder_constant(u, cyl, a) for a in self.alphas},
            time_holder_C=time_holder_constant(u, cyl),
            combined_C=combined_constant(u, cyl, self.combined_window),
            fitted_time_exponent=fitted_time_exponent(u, cyl),
            psi_certificate={"L_star": cert.L_star, "max_psi_at_L_star": cert.max_psi_at_L_star,
                             "K": K, "profile": profile.to_dict()},
        )
        return self


REFINEMENT_COLUMNS = ("level", "lipschitz_L", "holder_C", "combined_C", "L_star")


def write_refinement_csv(path: str | Path, rows: Sequence[tuple[int, RegularityReport]], alpha: float = 0.5) -> None:
    """One row per refinement level; ``holder_C`` is the entry for ``alpha``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REFINEMENT_COLUMNS)
        for level, rep in rows:
            w.writerow([level, repr(rep.lipschitz_L), repr(rep.holder_C[float(alpha)]),
                        repr(rep.combined_C), repr(rep.psi_certificate["L_star"])])
