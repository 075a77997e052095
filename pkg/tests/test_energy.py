import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trudinger_lab.energy import (
    build_cutoff,
    caccioppoli_check,
    caccioppoli_uniformity,
    cauchy_gradient_diagnostic,
    default_family_cutoff,
    monte_carlo_battery,
    vector_inequality_check,
)
from trudinger_lab.grid import GridFunction, SpaceTimeGrid
from trudinger_lab.infconv import InfConvParams, inf_convolve
from trudinger_lab.solver import Params

P3 = Params(p=3, m=1, M=3)


def unit_grid(n=21):
    return SpaceTimeGrid(0, 1, 0, 1, n, n)


class TestCutoff:
    def test_zero_margin(self):  # [TRIVIAL]
        with pytest.raises(ValueError, match="at least one node"):
            build_cutoff(unit_grid(), 0)

    def test_one_node_margin(self):  # [TRIVIAL] construction arithmetic
        cut = build_cutoff(unit_grid(), 1)
        v = cut.xi.values
        assert np.all(v[0] == 0) and np.all(v[:, -1] == 0)
        plateau = v == 1.0
        assert plateau.any()
        assert plateau[2:-2, 2:-2].all() and not plateau[1, 1]
        assert v.min() >= 0 and v.max() <= 1

    @pytest.mark.parametrize("ramp", [1, 3, 5])
    def test_gradient_bound(self, ramp):  # [DERIVED] direct finite-difference scan
        g = SpaceTimeGrid(0, 2, 0, 1, 41, 31)
        cut = build_cutoff(g, 2, ramp)
        v = cut.xi.values
        gx = np.abs(np.diff(v, axis=1)).max() / g.dx
        gt = np.abs(np.diff(v, axis=0)).max() / g.dt
        assert gx <= 2 / ((ramp + 1) * g.dx) + 1e-12
        assert gt <= 2 / ((ramp + 1) * g.dt) + 1e-12

    def test_margin_too_large(self):
        with pytest.raises(ValueError, match="margin too large"):
            build_cutoff(unit_grid(11), 3)

    def test_region(self):
        g = unit_grid()
        cut = build_cutoff(g, 1, region=(slice(5, 16), slice(5, 16)))
        assert np.all(cut.xi.values[:5] == 0) and np.all(cut.xi.values[:, 16:] == 0)
        assert cut.xi.values[10, 10] == 1.0


class TestCaccioppoli:
    def test_constant(self):  # [TRIVIAL]
        g = unit_grid()
        rep = caccioppoli_check(GridFunction(g, np.full(g.shape, 2.0)), build_cutoff(g, 1, 4), P3)
        assert rep.lhs == 0 and rep.rhs_raw > 0 and rep.ratio == 0

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_linear(self, p):  # [DERIVED] |Du| = 1, so lhs = int xi^p
        g = unit_grid(41)
        cut = build_cutoff(g, 2, 6)
        rep = caccioppoli_check(GridFunction.from_callable(g, lambda x, t: 2 + x + 0 * t), cut, Params(p=p, m=1, M=3))
        wt = np.full(g.nt, g.dt)
        wt[[0, -1]] /= 2
        wx = np.full(g.nx, g.dx)
        wx[[0, -1]] /= 2
        mass = float(np.sum(np.outer(wt, wx) * cut.xi.values**p))
        assert rep.lhs == pytest.approx(mass, rel=1e-12)
        assert rep.ratio <= 1.0

    def test_grid_mismatch(self):
        cut = build_cutoff(unit_grid(21), 1)
        g = unit_grid(31)
        with pytest.raises(ValueError, match="different grids"):
            caccioppoli_check(GridFunction(g, np.full(g.shape, 2.0)), cut, P3)

    def test_leaves_range(self):
        g = unit_grid()
        with pytest.raises(ValueError, match=r"\[0, M\]"):
            caccioppoli_check(GridFunction(g, np.full(g.shape, 5.0)), build_cutoff(g, 1), P3)

    def test_uniform_over_family(self, p3_family):  # [DERIVED] empirical sweep
        rep = caccioppoli_uniformity(p3_family, P3)
        assert rep.passed, rep.ratios
        assert np.all(rep.ratios > 0)

    def test_uniformity_head(self):
        from trudinger_lab.energy import UniformityReport
        rep = UniformityReport(np.array([1.0, 2.0, 1.0, 2.2, 2.0]), 0.05)
        assert rep.excess == pytest.approx(1.1) and not rep.passed

    def test_default_cutoff_inside_domain(self, p3_family):
        cut = default_family_cutoff(p3_family)
        assert np.all(p3_family[0].xi_mask[cut.xi.values > 0])


class TestCauchy:
    def test_identical(self, p3_family):  # [TRIVIAL]
        rep = cauchy_gradient_diagnostic([p3_family[0]] * 3, 2.0, 3.0)
        assert np.all(rep.distances == 0)

    def test_constant(self):  # [TRIVIAL]
        g = unit_grid()
        u = GridFunction(g, np.full(g.shape, 2.0))
        fam = [inf_convolve(u, InfConvParams(e, 0.01)) for e in (0.2, 0.1, 0.05)]
        assert np.all(cauchy_gradient_diagnostic(fam, 1.5, 2.0).distances == 0)

    def test_solver_family(self, p3_family):  # [DERIVED] empirical
        rep = cauchy_gradient_diagnostic(p3_family, 2.0, 3.0)
        D = rep.distances
        assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
        assert rep.passed, rep.consecutive

    @pytest.mark.parametrize("r", [1.0, 3.0, 3.5])
    def test_exponent_range(self, p3_family, r):
        with pytest.raises(ValueError):
            cauchy_gradient_diagnostic(p3_family, r, 3.0)

    def test_too_few(self, p3_family):
        with pytest.raises(ValueError):
            cauchy_gradient_diagnostic(p3_family[:2], 2.0, 3.0)


class TestVectorInequalities:
    def test_p2_collapse(self):  # [TRIVIAL]
        a, b = np.array([1.0, 2.0]), np.array([-0.5, 0.3])
        rep = vector_inequality_check(a, b, 2.0)
        assert rep.ineq1 and rep.ineq4 and rep.ineq2 is None and rep.ineq3 is None
        from trudinger_lab.energy import vector_inequality_margins
        m = vector_inequality_margins(a, b, 2.0)
        d = np.linalg.norm(a - b)
        assert m["ineq1"][0] == pytest.approx(1e-12 * (1 + np.linalg.norm(a) + np.linalg.norm(b)) ** 2, abs=1e-12)
        assert m["ineq4"][0] == pytest.approx(d, rel=1e-9)

    def test_p4_example(self):  # [DERIVED] arithmetic
        from trudinger_lab.energy import vector_inequality_margins
        m = vector_inequality_margins([1.0, 0.0], [0.0, 0.0], 4.0)
        assert m["ineq1"][0] == pytest.approx(0.75, abs=1e-9)

    def test_branches(self):
        rep = vector_inequality_check([1.0, 0.0], [0.0, 1.0], 1.5)
        assert rep.ineq1 is None and rep.ineq2 and rep.ineq3

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1.05, 8.0), st.lists(st.floats(-10, 10), min_size=4, max_size=4))
    def test_property(self, p, comps):
        assert vector_inequality_check(comps[:2], comps[2:], p).passed

    def test_monte_carlo_small(self):
        for p in (1.2, 3.0):
            counts = monte_carlo_battery(p, 20_000, seed=1, chunk=5_000)
            assert sum(counts.values()) == 0 and "elementary" in counts

    def test_monte_carlo_thread_independent(self):
        a = monte_carlo_battery(1.5, 30_000, seed=7, chunk=4_000, threads=1)
        b = monte_carlo_battery(1.5, 30_000, seed=7, chunk=4_000, threads=3)
        assert a == b
