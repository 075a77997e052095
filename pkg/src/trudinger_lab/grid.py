"""Uniform space-time grids, sampled fields, cylinders and moduli of continuity."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np

Direction = Literal["space", "time"]

# Relative tolerance (in units of the grid step) for deciding whether a node
# sits on a region boundary. Keeps Q_r membership stable against rounding in
# x_min + k*dx.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Tensor grid over [x_min, x_max] x [t_min, t_max] with nx by nt nodes."""

    x_min: float
    x_max: float
    t_min: float
    t_max: float
    nx: int
    nt: int

    def __post_init__(self) -> None:
        if int(self.nx) != self.nx or int(self.nt) != self.nt:
            raise ValueError("nx and nt must be integers")
        if self.nx < 2 or self.nt < 2:
            raise ValueError(f"need nx >= 2 and nt >= 2, got nx={self.nx}, nt={self.nt}")
        if not (self.x_max > self.x_min and self.t_max > self.t_min):
            raise ValueError("grid extents must be strictly increasing")
        for name in ("x_min", "x_max", "t_min", "t_max"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.nt - 1)

    @property
    def x(self) -> np.ndarray:
        """Space node coordinates, x_min + k*dx."""
        return self.x_min + np.arange(self.nx) * self.dx

    @property
    def t(self) -> np.ndarray:
        """Time node coordinates, t_min + n*dt."""
        return self.t_min + np.arange(self.nt) * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    def sub_grid(self, t_slice: slice, x_slice: slice) -> "SpaceTimeGrid":
        """Grid spanned by a contiguous block of nodes."""
        x = self.x[x_slice]
        t = self.t[t_slice]
        if x.size < 2 or t.size < 2:
            raise ValueError("sub-grid needs at least 2 nodes in each direction")
        return SpaceTimeGrid(float(x[0]), float(x[-1]), float(t[0]), float(t[-1]), x.size, t.size)


@dataclass(frozen=True)
class Cylinder:
    """Space-time cylinder B_r(center_x) x (top_t - r, top_t], closed at the top.

    The spatial ball is closed; the bottom time face is open.
    """

    r: float
    center_x: float = 0.0
    top_t: float = 0.0

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"cylinder radius must be positive, got {self.r}")

    def index_box(self, grid: SpaceTimeGrid) -> tuple[slice, slice]:
        """(time slice, space slice) of the grid nodes inside the cylinder."""
        x, t = grid.x, grid.t
        tol_x = _EDGE_TOL * grid.dx
        tol_t = _EDGE_TOL * grid.dt
        in_x = np.flatnonzero(np.abs(x - self.center_x) <= self.r + tol_x)
        in_t = np.flatnonzero((t > self.top_t - self.r + tol_t) & (t <= self.top_t + tol_t))
        if in_x.size == 0 or in_t.size == 0:
            raise ValueError("region outside grid")
        return slice(int(in_t[0]), int(in_t[-1]) + 1), slice(int(in_x[0]), int(in_x[-1]) + 1)


Region = Cylinder | tuple[slice, slice] | None


def region_box(grid: SpaceTimeGrid, region) -> tuple[slice, slice]:
    """Index box of a region.

    ``region`` is a Cylinder, an explicit (time slice, space slice) pair, or
    ``None`` for the whole grid.
    """
    if region is None:
        return slice(0, grid.nt), slice(0, grid.nx)
    if isinstance(region, tuple):
        ts, xs = (slice(*s.indices(n)[:2]) for s, n in zip(region, grid.shape))
        if ts.stop <= ts.start or xs.stop <= xs.start:
            raise ValueError("region outside grid")
        return ts, xs
    return region.index_box(grid)


class GridFunction:
    """Real field sampled on a SpaceTimeGrid; values are (nt, nx), time outer.

    Values are copied and frozen on construction.
    """

    __slots__ = ("grid", "values", "m_lo", "m_hi")

    def __init__(self, grid: SpaceTimeGrid, values) -> None:
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.shape != grid.shape:
            if arr.size != grid.nt * grid.nx:
                raise ValueError(
                    f"expected {grid.nt * grid.nx} values for a {grid.nt}x{grid.nx} grid, got {arr.size}"
                )
            arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid function values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr
        self.m_lo = float(arr.min())
        self.m_hi = float(arr.max())

    @classmethod
    def from_callable(cls, grid: SpaceTimeGrid, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "GridFunction":
        """Sample ``f(x, t)`` with broadcasting over the node lattice."""
        xx, tt = np.meshgrid(grid.x, grid.t)
        return cls(grid, np.broadcast_to(f(xx, tt), grid.shape))

    @property
    def is_positive(self) -> bool:
        return self.m_lo > 0.0

    def __repr__(self) -> str:
        g = self.grid
        return f"GridFunction(nx={g.nx}, nt={g.nt}, range=[{self.m_lo:.6g}, {self.m_hi:.6g}])"


@dataclass(frozen=True, eq=False)
class ModulusOfContinuity:
    """Piecewise-linear nondecreasing curve through (s_k, w_k) with w(0) = 0.

    Constant beyond the last breakpoint.
    """

    s: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if s.ndim != 1 or s.shape != w.shape or s.size < 1:
            raise ValueError("breakpoints must be matching 1-D arrays")
        if s[0] != 0.0 or w[0] != 0.0:
            raise ValueError("modulus must start at (0, 0)")
        if np.any(np.diff(s) <= 0):
            raise ValueError("breakpoint abscissae must be strictly increasing")
        if np.any(np.diff(w) < 0):
            raise ValueError("modulus must be nondecreasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "w", w)

    @classmethod
    def linear(cls, slope: float, s_max: float) -> "ModulusOfContinuity":
        """omega(s) = slope * s on [0, s_max], constant afterwards."""
        return cls(np.array([0.0, s_max]), np.array([0.0, slope * s_max]))

    @property
    def s_max(self) -> float:
        return float(self.s[-1])

    @property
    def sup(self) -> float:
        return float(self.w[-1])

    @property
    def strictly_increasing(self) -> bool:
        return self.s.size >= 2 and bool(np.all(np.diff(self.w) > 0))

    def __call__(self, s):
        return np.interp(np.abs(s), self.s, self.w)

    def inverse(self, y):
        """Smallest s with omega(s) >= y, for y in [0, sup]."""
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0) or np.any(y > self.sup):
            raise ValueError("value outside the range of the modulus")
        k = np.searchsorted(self.w, y, side="left")
        k = np.maximum(k, 1)
        if self.s.size == 1:
            return np.zeros_like(y)
        w0, w1 = self.w[k - 1], self.w[k]
        s0, s1 = self.s[k - 1], self.s[k]
        frac = np.where(w1 > w0, (y - w0) / np.where(w1 > w0, w1 - w0, 1.0), 0.0)
        out = np.where(y <= 0, 0.0, s0 + frac * (s1 - s0))
        return out if out.ndim else float(out)

    def is_strictly_increasing_up_to(self, y: float) -> bool:
        """Strict monotonicity on the part of the curve needed to invert ``y``."""
        if y > self.sup:
            return False
        k = int(np.searchsorted(self.w, y, side="left"))
        return bool(np.all(np.diff(self.w[: k + 1]) > 0))


def oscillation(u: GridFunction, region: Region = None) -> float:
    """max - min of u over the nodes inside ``region``."""
    ts, xs = region_box(u.grid, region)
    block = u.values[ts, xs]
    return float(block.max() - block.min())


def restrict(u: GridFunction, region: Cylinder) -> GridFunction:
    """Sub-grid function on the nodes inside ``region``."""
    ts, xs = region_box(u.grid, region)
    if ts.stop - ts.start < 2 or xs.stop - xs.start < 2:
        raise ValueError("region must contain at least 2 nodes per direction to form a grid")
    return GridFunction(u.grid.sub_grid(ts, xs), u.values[ts, xs])


def lag_differences(u: GridFunction, region: Region = None, direction: Direction = "space") -> np.ndarray:
    """Largest |u(z) - u(z')| over node pairs exactly k steps apart, for each lag k.

    Entry 0 is 0. Pairs are same-time for ``space`` and same-position for ``time``.
    """
    ts, xs = region_box(u.grid, region)
    block = u.values[ts, xs]
    if direction == "time":
        block = block.T
    elif direction != "space":
        raise ValueError(f"direction must be 'space' or 'time', got {direction!r}")
    n = block.shape[1]
    if n < 2:
        raise ValueError(f"region needs at least 2 nodes in the {direction} direction")
    out = np.zeros(n)
    for k in range(1, n):
        out[k] = np.abs(block[:, k:] - block[:, :-k]).max()
    return out


def optimal_modulus(u: GridFunction, region: Region = None, direction: Direction = "space") -> ModulusOfContinuity:
    """Discrete optimal modulus: sup of |u(z) - u(z')| over pairs at distance <= s."""
    raw = lag_differences(u, region, direction)
    h = u.grid.dx if direction == "space" else u.grid.dt
    return ModulusOfContinuity(np.arange(raw.size) * h, np.maximum.accumulate(raw))


# --- file format -----------------------------------------------------------

MAGIC = "# trudinger-gridfun v1"
_HEADER = re.compile(
    r"^# nx=(?P<nx>\d+) nt=(?P<nt>\d+) x_min=(?P<x_min>\S+) x_max=(?P<x_max>\S+)"
    r" t_min=(?P<t_min>\S+) t_max=(?P<t_max>\S+)$"
)


def format_grid_function(u: GridFunction) -> str:
    g = u.grid
    lines = [
        MAGIC,
        f"# nx={g.nx} nt={g.nt} x_min={float(g.x_min)!r} x_max={float(g.x_max)!r}"
        f" t_min={float(g.t_min)!r} t_max={float(g.t_max)!r}",
    ]
    lines.extend(" ".join(repr(v) for v in row) for row in u.values.tolist())
    return "\n".join(lines) + "\n"


def parse_grid_function(text: str) -> GridFunction:
    lines = text.splitlines()
    if len(lines) < 2 or lines[0].strip() != MAGIC:
        raise ValueError("not a trudinger-gridfun v1 file")
    m = _HEADER.match(lines[1].strip())
    if m is None:
        raise ValueError(f"malformed header line: {lines[1]!r}")
    nx, nt = int(m["nx"]), int(m["nt"])
    grid = SpaceTimeGrid(float(m["x_min"]), float(m["x_max"]), float(m["t_min"]), float(m["t_max"]), nx, nt)
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != nt:
        raise ValueError(f"expected {nt} value rows, found {len(rows)}")
    values = np.empty((nt, nx))
    for n, row in enumerate(rows):
        fields = row.split()
        if len(fields) != nx:
            raise ValueError(f"row {n}: expected {nx} values, found {len(fields)}")
        values[n] = [float(f) for f in fields]
    return GridFunction(grid, values)


def write_grid_function(path: str | Path, u: GridFunction) -> None:
    Path(path).write_text(format_grid_function(u), encoding="utf-8")


def read_grid_function(path: str | Path) -> GridFunction:
    return parse_grid_function(Path(path).read_text(encoding="utf-8"))
