"""Batch command line: ``run`` an experiment from an INI config, ``report`` a finished run.

Config grammar (INI, one section per concern, all keys optional unless noted)::

    [run]          experiment = solve | infconv | energy | metrology | barrier | full-pipeline
    [params]       p (required), m (required), M (required), q, delta_reg
    [grid]         x_min, x_max, t_min, t_max, nx (required), nt
    [initial_data] kind = constant | linear | kink | sine | file, plus
                   value | a, b | base, slope, center | base, amplitude | path
    [infconv]      epsilon_sweep, q, method
    [energy]       samples, r
    [metrology]    alpha, refinements, cylinder_r, cylinder_center, cylinder_top
    [barrier]      center, t0, radius, gaps

Lists are comma separated. Omitting ``nt`` picks dt close to dx^2.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._parallel import THREADS_ENV, resolve_threads
from .barrier import barrier_exponent, barrier_time_holder, bound_slope, make_barrier, residual_sample, \
    supersolution_residual, weak_barrier_check, write_barrier_csv
from .energy import caccioppoli_uniformity, cauchy_gradient_diagnostic, monte_carlo_battery
from .grid import Cylinder, GridFunction, SpaceTimeGrid, optimal_modulus, read_grid_function, \
    write_grid_function
from .infconv import InfConvolution, check_penalty_bounds, semiconcavity_check, write_inf_convolution
from .metrology import HALF_CYLINDER, RegularityMeter, default_base_points, lipschitz_constant, normalize_to_unit, \
    write_refinement_csv
from .solver import Params, SolverError, scheme_residual, solve

EXPERIMENTS = ("solve", "infconv", "energy", "metrology", "barrier", "full-pipeline")
STAGES = {
    "solve": ("solve",),
    "infconv": ("solve", "infconv"),
    "energy": ("solve", "infconv", "energy"),
    "metrology": ("solve", "metrology"),
    "barrier": ("solve", "barrier"),
    "full-pipeline": ("solve", "infconv", "energy", "metrology", "barrier"),
}
REPORT_FILE = "report.json"


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    params: Params
    grid: SpaceTimeGrid
    initial_data: Callable[[np.ndarray], np.ndarray]
    initial_desc: dict
    epsilon_sweep: list[float]
    infconv_q: float = 2.0
    infconv_method: str = "exhaustive"
    alpha: float = 0.5
    refinements: int = 0
    cylinder: Cylinder | None = None
    samples: int = 100_000
    cauchy_r: float | None = None
    barrier_center: float = 0.0
    barrier_t0: float | None = None
    barrier_radius: float = 1.0
    barrier_gaps: list[float] = field(default_factory=lambda: [4.0**-k for k in range(2, 7)])


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _generator(sec: configparser.SectionProxy, nx: int, base_dir: Path) -> tuple[Callable, dict]:
    kind = sec.get("kind", "kink")
    if kind == "constant":
        c = sec.getfloat("value", 2.0)
        return (lambda x: np.full_like(x, c)), {"kind": kind, "value": c}
    if kind == "linear":
        a, b = sec.getfloat("a", 2.0), sec.getfloat("b", 1.0)
        return (lambda x: a + b * x), {"kind": kind, "a": a, "b": b}
    if kind == "kink":
        base, slope, c = sec.getfloat("base", 2.0), sec.getfloat("slope", 1.0), sec.getfloat("center", 0.0)
        return (lambda x: base + slope * np.abs(x - c)), {"kind": kind, "base": base, "slope": slope, "center": c}
    if kind == "sine":
        base, amp = sec.getfloat("base", 2.0), sec.getfloat("amplitude", 0.3)
        return (lambda x: base + amp * np.sin(np.pi * x)), {"kind": kind, "base": base, "amplitude": amp}
    if kind == "file":
        if "path" not in sec:
            raise ConfigError("initial_data kind=file needs a path")
        path = Path(sec["path"])
        path = path if path.is_absolute() else base_dir / path
        if not path.exists():
            raise ConfigError(f"initial data file not found: {path}")
        row = read_grid_function(path).values[0].copy()
        if row.size != nx:
            raise ConfigError(f"initial data file has {row.size} nodes, grid has {nx}")
        return (lambda x: row.copy()), {"kind": kind, "path": str(sec["path"])}
    raise ConfigError(f"unknown initial_data kind {kind!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
        return _build(cp, path.parent)
    except (configparser.Error, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc


def _section(cp: configparser.ConfigParser, name: str) -> configparser.SectionProxy:
    if not cp.has_section(name):
        cp.add_section(name)
    return cp[name]


def _build(cp: configparser.ConfigParser, base_dir: Path) -> ExperimentConfig:
    experiment = _section(cp, "run").get("experiment", "full-pipeline")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    ps = _section(cp, "params")
    for key in ("p", "m", "M"):
        if key not in ps:
            raise ConfigError(f"[params] is missing {key}")
    q = ps.getfloat("q") if "q" in ps else None
    delta = ps.getfloat("delta_reg") if "delta_reg" in ps else None
    params = Params(p=ps.getfloat("p"), m=ps.getfloat("m"), M=ps.getfloat("M"), q=q, delta_reg=delta)

    gs = _section(cp, "grid")
    if "nx" not in gs:
        raise ConfigError("[grid] is missing nx")
    x_min, x_max = gs.getfloat("x_min", -1.0), gs.getfloat("x_max", 1.0)
    t_min, t_max = gs.getfloat("t_min", 0.0), gs.getfloat("t_max", 0.25)
    nx = gs.getint("nx")
    dx = (x_max - x_min) / (nx - 1) if nx > 1 else 0.0
    nt = gs.getint("nt") if "nt" in gs else int(round((t_max - t_min) / (dx * dx))) + 1 if dx > 0 else 2
    grid = SpaceTimeGrid(x_min, x_max, t_min, t_max, nx, nt)

    gen, desc = _generator(_section(cp, "initial_data"), nx, base_dir)
    data = gen(grid.x)
    if data.min() < params.m or data.max() > params.M:
        raise ConfigError(f"initial data leave [m, M] = [{params.m}, {params.M}]")

    ic = _section(cp, "infconv")
    sweep = _floats(ic["epsilon_sweep"]) if "epsilon_sweep" in ic else [2.0**-k for k in range(3, 8)]
    en = _section(cp, "energy")
    mt = _section(cp, "metrology")
    cylinder = None
    if any(k in mt for k in ("cylinder_r", "cylinder_center", "cylinder_top")):
        cylinder = Cylinder(mt.getfloat("cylinder_r", 1.0), mt.getfloat("cylinder_center", 0.0),
                            mt.getfloat("cylinder_top", t_max))
    br = _section(cp, "barrier")
    gaps = _floats(br["gaps"]) if "gaps" in br else [4.0**-k for k in range(2, 7)]
    return ExperimentConfig(
        experiment=experiment, params=params, grid=grid, initial_data=gen, initial_desc=desc,
        epsilon_sweep=sorted(sweep, reverse=True),
        infconv_q=ic.getfloat("q", 2.0), infconv_method=ic.get("method", "exhaustive"),
        alpha=mt.getfloat("alpha", 0.5), refinements=mt.getint("refinements", 0), cylinder=cylinder,
        samples=en.getint("samples", 100_000), cauchy_r=en.getfloat("r") if "r" in en else None,
        barrier_center=br.getfloat("center", 0.0),
        barrier_t0=br.getfloat("t0") if "t0" in br else None,
        barrier_radius=br.getfloat("radius", 1.0), barrier_gaps=gaps,
    )


# --- checks and artifacts ------------------------------------------------------------

@dataclass
class Check:
    name: str
    property: str
    passed: bool
    margin: float

    def to_dict(self) -> dict:
        m = self.margin
        return {"name": self.name, "property": self.property, "passed": bool(self.passed),
                "margin": None if not math.isfinite(m) else float(m)}


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _finite(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, dict):
        return {str(k): _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    if isinstance(v, np.generic):
        return _finite(v.item())
    return v


class Pipeline:
    """Runs the enabled stages in order, collecting checks and writing artifacts."""

    def __init__(self, cfg: ExperimentConfig, out: Path, seed: int, threads: int):
        self.cfg, self.out, self.seed, self.threads = cfg, out, seed, threads
        self.checks: list[Check] = []
        self.u: GridFunction | None = None
        self.family: list = []

    def check(self, name: str, prop: str, passed: bool, margin: float) -> None:
        self.checks.append(Check(name, prop, bool(passed), float(margin)))

    def run(self) -> None:
        for stage in STAGES[self.cfg.experiment]:
            getattr(self, f"stage_{stage}")()

    def _solve(self, grid: SpaceTimeGrid) -> GridFunction:
        return solve(grid, self.cfg.initial_data, None, self.cfg.params).u

    def stage_solve(self) -> None:
        cfg = self.cfg
        res = solve(cfg.grid, cfg.initial_data, None, cfg.params)
        self.u = res.u
        write_grid_function(self.out / "solution.gridfun.txt", res.u)
        r = scheme_residual(res.u, cfg.params) if cfg.grid.nx > 2 else np.zeros(1)
        worst = float(np.abs(r).max()) if r.size else 0.0
        tol = 1e-8
        _dump(self.out / "solve.json", _finite({"run_log": res.run_log(), "max_scheme_residual": worst,
                                                "initial_data": cfg.initial_desc}))
        self.check("solver residual", "implicit scheme solved to tolerance", worst <= tol, tol - worst)
        self.check("positivity", "solution stays in [m, M]",
                   bool(res.u.values.min() >= cfg.params.m - 1e-12 and res.u.values.max() <= cfg.params.M + 1e-12),
                   min(res.u.values.min() - cfg.params.m, cfg.params.M - res.u.values.max()))

    def stage_infconv(self) -> None:
        cfg, u = self.cfg, self.u
        folder = self.out / "infconv"
        folder.mkdir(exist_ok=True)
        omega_x = optimal_modulus(u)
        omega_t = optimal_modulus(u, None, "time")
        rows = []
        self.family = []
        for k, eps in enumerate(cfg.epsilon_sweep):
            est = InfConvolution(epsilon=eps, q=cfg.infconv_q, omega_t=omega_t, method=cfg.infconv_method,
                                 threads=self.threads).fit(u)
            res = est.transform(u)
            self.family.append(res)
            write_inf_convolution(folder / f"eps_{k}", res)
            below = float((res.u_eps.values - u.values).max())
            recon = res.reconstruction_error()
            semi = semiconcavity_check(res)
            pen = check_penalty_bounds(res, omega_x, omega_t)
            tag = f"eps={eps:g}"
            self.check(f"below original [{tag}]", "u_eps <= u", below <= 1e-12, 1e-12 - below)
            self.check(f"reconstruction [{tag}]", "u_eps equals the penalized value at its minimizer",
                       recon <= 1e-14, 1e-14 - recon)
            self.check(f"semiconcavity [{tag}]", "u_eps minus a paraboloid is concave", semi.passed,
                       semi.tol - max(semi.max_second_difference_x, semi.max_second_difference_t))
            self.check(f"penalty bounds [{tag}]", "minimizer displacement controlled by the moduli", pen.passed,
                       min(pen.time_margin, pen.space_margin))
            rows.append({"epsilon": eps, "delta_eps": res.params.delta_eps, "xi_eps_bounds": res.xi_bounds(),
                         "below_excess": below, "reconstruction_error": recon,
                         "semiconcavity_failures": semi.failures, "penalty_violations": pen.violations,
                         "penalty_time_margin": pen.time_margin, "penalty_space_margin": pen.space_margin,
                         "nodes_checked": pen.nodes_checked})
        _dump(self.out / "infconv.json", _finite({"family": rows}))

    def stage_energy(self) -> None:
        cfg = self.cfg
        p = cfg.params.p
        uni = caccioppoli_uniformity(self.family, cfg.params)
        self.check("caccioppoli uniformity", "energy ratio bounded uniformly along the family", uni.passed,
                   1 + uni.slack - uni.excess)
        r = cfg.cauchy_r if cfg.cauchy_r is not None else min(2.0, 0.5 * (1 + p))
        cauchy = cauchy_gradient_diagnostic(self.family, r, p)
        d = cauchy.consecutive
        worst = float(np.max(d[1:] - (1 + cauchy.slack) * d[:-1])) if d.size > 1 else -np.inf
        self.check("cauchy gradients", "consecutive gradient distances shrink", cauchy.passed, -worst)
        counts = monte_carlo_battery(p, cfg.samples, self.seed, threads=self.threads)
        bad = sum(counts.values())
        self.check("vector inequalities", "p-Laplace monotonicity inequalities on random samples", bad == 0, -bad)
        _dump(self.out / "energy.json", _finite({
            "caccioppoli_ratios": uni.ratios.tolist(), "caccioppoli_excess": uni.excess,
            "cauchy_r": r, "cauchy_distances": cauchy.distances.tolist(), "cauchy_consecutive": d.tolist(),
            "monte_carlo": {"seed": self.seed, "samples": cfg.samples, "violations": counts},
        }))

    def _cylinder(self, grid: SpaceTimeGrid) -> Cylinder:
        if self.cfg.cylinder is not None:
            return self.cfg.cylinder
        half = 0.5 * (grid.x_max - grid.x_min)
        return Cylinder(min(half, grid.t_max - grid.t_min), 0.5 * (grid.x_min + grid.x_max), grid.t_max)

    def stage_metrology(self) -> None:
        cfg = self.cfg
        rows = []
        reports = {}
        bases = None
        for level in range(cfg.refinements + 1):
            if level == 0:
                u = self.u
            else:
                g = cfg.grid
                fine = SpaceTimeGrid(g.x_min, g.x_max, g.t_min, g.t_max, (g.nx - 1) * 2**level + 1,
                                     (g.nt - 1) * 4**level + 1)
                u = self._solve(fine)
            unit = normalize_to_unit(u, self._cylinder(u.grid))
            # coarse nodes persist under refinement, so every level probes the same base points
            if bases is None:
                bases = default_base_points(unit.grid)
            meter = RegularityMeter(alphas=(cfg.alpha,), base_points=bases, threads=self.threads).fit(unit)
            rows.append((level, meter.report_))
            reports[str(level)] = meter.report_.to_dict()
        write_refinement_csv(self.out / "refinement.csv", rows, cfg.alpha)
        _dump(self.out / "metrology.json", _finite({"levels": reports}))
        rep = rows[0][1]
        star = rep.psi_certificate["L_star"]
        lip = lipschitz_constant(normalize_to_unit(self.u, self._cylinder(self.u.grid)), HALF_CYLINDER)
        self.check("psi certificate", "max psi <= 0 at the certified L", rep.psi_certificate["max_psi_at_L_star"] <= 0,
                   -rep.psi_certificate["max_psi_at_L_star"])
        if lip > 0:
            self.check("certificate vs pair scan", "certified L within 15% of the pair-scan Lipschitz constant on the half cylinder",
                       abs(star - lip) <= 0.15 * lip, 0.15 * lip - abs(star - lip))
        if len(rows) > 1:
            for key, get in (("lipschitz_L", lambda r: r.lipschitz_L), ("time_holder_C", lambda r: r.time_holder_C),
                             ("L_star", lambda r: r.psi_certificate["L_star"])):
                vals = np.array([get(r) for _, r in rows])
                drift = float(np.max(np.abs(np.diff(vals)) / np.maximum(np.abs(vals[:-1]), 1e-300)))
                self.check(f"refinement drift [{key}]", "constant stable under grid refinement", drift < 0.10,
                           0.10 - drift)

    def stage_barrier(self) -> None:
        cfg, u = self.cfg, self.u
        g = u.grid
        t0 = g.t_min if cfg.barrier_t0 is None else cfg.barrier_t0
        i0 = int(np.argmin(np.abs(g.x - cfg.barrier_center)))
        n0 = int(np.argmin(np.abs(g.t - t0)))
        L = lipschitz_constant(u, (slice(n0, n0 + 1), slice(0, g.nx)))
        p = cfg.params.p
        beta = barrier_exponent(p)
        ident = abs((beta - 1) * (p - 1) - 1.0)
        self.check("barrier exponent", "(beta - 1)(p - 1) = 1", ident <= 1e-15, 1e-15 - ident)
        reports, worst_res, worst_weak = [], np.inf, np.inf
        for gap in cfg.barrier_gaps:
            # gaps snap to the time grid; those under one step are skipped
            n1 = n0 + int(round(gap / g.dt))
            if n1 == n0 or n1 >= g.nt:
                continue
            s0 = float(g.t[n1])
            rep = barrier_time_holder(u, i0, float(g.t[n0]), s0, L, cfg.params, radius=cfg.barrier_radius)
            reports.append(rep)
            spec = make_barrier(u, float(g.t[n0]), s0, L, cfg.params, center=float(g.x[i0]),
                                radius=cfg.barrier_radius)
            for lower in (False, True):
                xs, ts = residual_sample(spec, g, lower)
                if xs.size:
                    worst_res = min(worst_res, supersolution_residual(spec, xs, ts, cfg.params, lower).min_residual)
            worst_weak = min(worst_weak, weak_barrier_check(spec, g, cfg.params))
        write_barrier_csv(self.out / "barrier.csv", reports)
        _dump(self.out / "barrier.json", _finite({
            "L": L, "reports": [vars(r) for r in reports], "min_residual": worst_res, "min_weak_residual": worst_weak,
            "bound_slope": bound_slope(reports),
        }))
        if not reports:
            self.check("barrier comparison", "time increments bounded by the barrier", False, -np.inf)
            return
        self.check("barrier residual", "barrier is a pointwise supersolution", worst_res >= 0, worst_res)
        tol = 1e-12
        self.check("barrier weak residual", "truncated barrier is a discrete supersolution", worst_weak >= -tol,
                   worst_weak + tol)
        bad = [r for r in reports if not r.ok]
        self.check("barrier comparison", "time increments bounded by the barrier", not bad,
                   min(r.bound - abs(r.measured) for r in reports))
        slope = bound_slope(reports)
        if math.isfinite(slope):
            self.check("barrier slope", "bound scales like the square root of the time gap",
                       abs(slope - 0.5) <= 0.05, 0.05 - abs(slope - 0.5))


def run(config_path: str | Path, output: str | Path, seed: int = 0, threads: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
        threads = resolve_threads(threads)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(cfg, out, seed, threads)
    try:
        pipe.run()
    except (SolverError, ValueError, RuntimeError) as exc:
        pipe.check("pipeline", "all stages ran", False, -np.inf)
        print(f"run aborted: {exc}", file=sys.stderr)
    failed = [c.name for c in pipe.checks if not c.passed]
    _dump(out / REPORT_FILE, {
        "experiment": cfg.experiment, "seed": seed, "passed": not failed,
        "checks": [c.to_dict() for c in pipe.checks],
    })
    for name in failed:
        print(f"check failed: {name}", file=sys.stderr)
    return 1 if failed else 0


def report_render(directory: str | Path, stream=None) -> int:
    stream = stream or sys.stdout
    path = Path(directory) / REPORT_FILE
    if not path.exists():
        print(f"no report found in {directory}", file=sys.stderr)
        return 2
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        checks = data["checks"]
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"unreadable report: {exc}", file=sys.stderr)
        return 2
    rows = [(c["name"], c["property"], "pass" if c["passed"] else "FAIL",
             "n/a" if c["margin"] is None else f"{c['margin']:.3e}") for c in checks]
    head = ("check", "property", "status", "margin")
    widths = [max(len(r[k]) for r in rows + [head]) for k in range(4)]
    line = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
    print(f"experiment: {data.get('experiment')}  seed: {data.get('seed')}", file=stream)
    print(line(head), file=stream)
    print(line(tuple("-" * w for w in widths)), file=stream)
    for r in rows:
        print(line(r), file=stream)
    return 0 if data.get("passed") else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trudinger-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback: ${THREADS_ENV})")
    rep = sub.add_parser("report", help="print the check table of a finished run")
    rep.add_argument("dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.command == "run":
        if args.seed < 0 or args.seed >= 2**64:
            print("config error: seed must fit in an unsigned 64-bit integer", file=sys.stderr)
            return 2
        return run(args.config, args.output, args.seed, args.threads)
    return report_render(args.dir)


if __name__ == "__main__":
    sys.exit(main())
