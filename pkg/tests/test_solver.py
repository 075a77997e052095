import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from trudinger_lab.grid import GridFunction, SpaceTimeGrid
from trudinger_lab.solver import (
    NewtonConvergenceError,
    Params,
    PositivityLostError,
    SolverConfig,
    TrudingerSolver,
    comparison_check,
    flux,
    p_laplacian,
    scheme_residual,
    solve,
    step_implicit,
    weak_residual,
)

P_SET = [1.5, 2.0, 3.0, 4.0]


def bump(grid, x0, x1, t0, t1):
    """Nonnegative C^1 bump supported strictly inside [x0, x1] x [t0, t1]."""
    def f(x, t):
        sx = np.clip((x - x0) * (x1 - x), 0, None) ** 2
        st_ = np.clip((t - t0) * (t1 - t), 0, None) ** 2
        return sx * st_
    v = GridFunction.from_callable(grid, f).values
    return GridFunction(grid, v / v.max())


class TestParams:
    def test_q_defaults(self):
        assert Params(p=3, m=1, M=2).q == 2.0
        assert Params(p=1.5, m=1, M=2).q == pytest.approx(3.5)

    @pytest.mark.parametrize("kw", [dict(p=1.0), dict(m=0.0), dict(m=3.0), dict(p=3, q=3.0), dict(p=1.5, q=2.5)])
    def test_rejects(self, kw):
        args = dict(p=2.0, m=1.0, M=2.0) | kw
        with pytest.raises(ValueError):
            Params(**args)

    def test_regularization_default(self):
        assert Params(p=3, m=1, M=2).delta_for(0.1) == 0.0
        assert Params(p=1.5, m=1, M=2).delta_for(0.1) == pytest.approx(0.01)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(newton_tol=0)
        with pytest.raises(ValueError):
            SolverConfig(damping=1.5)


class TestPLaplacian:
    @pytest.mark.parametrize("p", P_SET)
    def test_linear_is_zero(self, p):  # [TRIVIAL]
        x = np.linspace(0, 1, 11)
        out = p_laplacian(2 + 3 * x, 0.1, Params(p=p, m=1, M=9), delta=0.0)
        assert np.isnan(out[0]) and np.isnan(out[-1])
        np.testing.assert_allclose(out[1:-1], 0, atol=1e-9)

    def test_quadratic_p2(self):  # [TRIVIAL] 3-point stencil is exact on quadratics
        x = np.linspace(0, 1, 21)
        out = p_laplacian(x**2, 0.05, Params(p=2, m=1, M=2))
        np.testing.assert_allclose(out[1:-1], 2.0, rtol=1e-10)

    def test_quadratic_p3(self):  # [DERIVED] d/dx(|2x| 2x) = 8x on [0.5, 1.5]
        # forward differences of x^2 are 2x at midpoints, so the flux 4x^2
        # differences back to 8x with no truncation error at all
        for n in (21, 41, 81):
            x = np.linspace(0.5, 1.5, n)
            out = p_laplacian(x**2, 1.0 / (n - 1), Params(p=3, m=0.1, M=3))
            assert np.abs(out[1:-1] - 8 * x[1:-1]).max() < 1e-10

    def test_too_short(self):
        with pytest.raises(ValueError):
            p_laplacian([1.0, 2.0], 0.1, Params(p=2, m=1, M=2))

    def test_p2_flux_collapses(self):  # p = 2 reduces to the heat flux exactly
        d = np.linspace(-3, 3, 13)
        assert np.array_equal(flux(d, 2.0, 0.0), d)


class TestStep:
    @pytest.mark.parametrize("p", P_SET)
    def test_constant(self, p):  # [TRIVIAL]
        u = step_implicit(np.full(11, 1.7), 0.3, Params(p=p, m=1, M=2), (1.7, 1.7), dx=0.1)
        np.testing.assert_allclose(u, 1.7, rtol=0, atol=1e-13)

    @pytest.mark.parametrize("p", P_SET)
    def test_linear(self, p):  # [TRIVIAL]
        x = np.linspace(0, 1, 11)
        line = 2 + x
        u = step_implicit(line, 0.01, Params(p=p, m=1, M=4), (2.0, 3.0), dx=0.1)
        np.testing.assert_allclose(u, line, atol=1e-10)

    def test_heat_one_step(self):  # [DERIVED] closed-form heat flow
        nx, dt = 101, 1e-3
        x = np.linspace(0, 1, nx)
        u = step_implicit(2 + np.sin(np.pi * x), dt, Params(p=2, m=1, M=4), (2.0, 2.0), dx=0.01)
        exact = 2 + np.exp(-np.pi**2 * dt) * np.sin(np.pi * x)
        assert np.abs(u - exact).max() < 100 * (dt**2 + dt * 0.01**2)

    def test_positivity_error(self):
        with pytest.raises(PositivityLostError, match="positivity lost"):
            step_implicit(np.array([1.0, 0.0, 1.0]), 0.1, Params(p=3, m=0.5, M=2), (1.0, 1.0), dx=0.5)

    def test_newton_failure_carries_residual(self):
        x = np.linspace(0, 1, 21)
        cfg = SolverConfig(newton_max_iter=1, newton_tol=1e-14)
        with pytest.raises(NewtonConvergenceError) as info:
            step_implicit(2 + np.sin(np.pi * x), 0.5, Params(p=4, m=1, M=4), (2.0, 2.0), cfg, dx=0.05)
        assert info.value.residual_norm is not None and info.value.residual_norm > 0

    def test_dx_is_required(self):
        with pytest.raises(TypeError):
            step_implicit(np.full(5, 2.0), 0.1, Params(p=2, m=1, M=3), (2.0, 2.0))


class TestSolve:
    def test_constant_field(self):  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 1, 11, 6)
        u = solve(g, np.full(11, 2.5), None, Params(p=3, m=1, M=3)).u
        assert np.all(u.values == 2.5)

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_linear_field(self, p):  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 0.5, 21, 11)
        u = solve(g, lambda x: 1.5 + x, None, Params(p=p, m=1, M=3)).u
        np.testing.assert_allclose(u.values, np.broadcast_to(1.5 + g.x, g.shape), atol=1e-10)

    def test_run_log(self):
        g = SpaceTimeGrid(0, 1, 0, 0.1, 11, 5)
        res = solve(g, lambda x: 2 + np.sin(np.pi * x), None, Params(p=2, m=1, M=4))
        log = res.run_log()
        assert len(log["newton_iters"]) == 4 and log["max_residual"] <= 1e-10

    def test_data_outside_bounds(self):
        g = SpaceTimeGrid(0, 1, 0, 0.1, 11, 5)
        with pytest.raises(ValueError, match=r"\[m, M\]"):
            solve(g, lambda x: 2 + x, None, Params(p=2, m=1, M=2.5))

    def test_boundary_callable_and_array(self):
        g = SpaceTimeGrid(0, 1, 0, 0.1, 11, 5)
        a = solve(g, lambda x: 2 + 0 * x, lambda t: (2.0 + t, 2.0), Params(p=2, m=1, M=4)).u
        arr = np.column_stack([2.0 + g.t, np.full(g.nt, 2.0)])
        b = solve(g, lambda x: 2 + 0 * x, arr, Params(p=2, m=1, M=4)).u
        assert np.array_equal(a.values, b.values)
        assert a.values[-1, 0] == pytest.approx(2.1)
        with pytest.raises(ValueError):
            solve(g, lambda x: 2 + 0 * x, np.ones((3, 2)), Params(p=2, m=1, M=4))

    @settings(max_examples=15, deadline=None)
    @given(st.sampled_from(P_SET), st.lists(st.floats(1.2, 2.8), min_size=9, max_size=9))
    def test_maximum_principle(self, p, data):
        g = SpaceTimeGrid(0, 1, 0, 0.05, 9, 6)
        u = solve(g, np.array(data), None, Params(p=p, m=1, M=3)).u
        tol = 1e-9
        assert u.m_lo >= min(data) - tol and u.m_hi <= max(data) + tol

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_order_preservation(self, p):  # [DERIVED] ordered data pairs
        g = SpaceTimeGrid(-1, 1, 0, 0.1, 41, 41)
        prm = Params(p=p, m=1, M=4)
        lo = solve(g, lambda x: 2 + 0.5 * np.cos(np.pi * x / 2), None, prm).u
        hi = solve(g, lambda x: 2.1 + 0.5 * np.cos(np.pi * x / 2) + 0.05 * x**2, None, prm).u
        rep = comparison_check(lo, hi)
        assert rep.max_violation <= 10 * 1e-10

    @pytest.mark.parametrize("p", P_SET)
    def test_discrete_conservation(self, p):
        # interior sum of w changes by exactly dt times the net boundary flux
        g = SpaceTimeGrid(-1, 1, 0, 0.05, 31, 11)
        prm = Params(p=p, m=1, M=4)
        u = solve(g, lambda x: 2 + np.cos(np.pi * x), None, prm).u
        w = u.values ** (p - 1)
        F = flux(np.diff(u.values, axis=1) / g.dx, p, prm.delta_for(g.dx))
        lhs = (w[1:, 1:-1] - w[:-1, 1:-1]).sum(axis=1) * g.dx
        rhs = g.dt * (F[1:, -1] - F[1:, 0])
        resid = scheme_residual(u, prm).sum(axis=1) * g.dx
        np.testing.assert_allclose(lhs - rhs, resid, atol=1e-13)
        assert np.abs(resid).max() < 1e-9

    def test_p2_jacobian_is_heat_matrix(self):
        from trudinger_lab.solver import _jacobian_bands
        u = np.linspace(1, 2, 7)
        ab = _jacobian_bands(u, 0.01, 0.1, 2.0, 0.0)
        assert np.allclose(ab[1], 1 + 2.0) and np.allclose(ab[0, 1:], -1.0) and np.allclose(ab[2, :-1], -1.0)


class TestWeakResidual:
    def test_constant(self):  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 1, 21, 21)
        u = GridFunction(g, np.full(g.shape, 2.0))
        assert abs(weak_residual(u, bump(g, 0.2, 0.8, 0.1, 0.9), Params(p=3, m=1, M=3))) < 1e-14

    @pytest.mark.parametrize("p", P_SET)
    def test_solver_output_is_exact(self, p):
        g = SpaceTimeGrid(-1, 1, 0, 0.1, 41, 41)
        prm = Params(p=p, m=1, M=4)
        u = solve(g, lambda x: 2 + 0.5 * np.cos(np.pi * x / 2), None, prm).u
        phi = bump(g, -0.6, 0.7, 0.01, 0.09)
        direct = weak_residual(u, phi, prm)
        via_scheme = float(np.sum(phi.values[1:, 1:-1] * scheme_residual(u, prm)) * g.dx)
        assert direct == pytest.approx(via_scheme, abs=1e-14)
        # each nodal residual is below the Newton tolerance
        assert abs(direct) <= 1e-10 * float(phi.values.sum()) * g.dx

    def test_exact_heat_refinement(self):  # [DERIVED] Richardson slope under dt ~ dx^2
        prm = Params(p=2, m=1, M=4)
        vals = []
        for nx in (21, 41, 81):
            dx = 1.0 / (nx - 1)
            nt = int(round(0.1 / (0.5 * dx * dx))) + 1
            g = SpaceTimeGrid(0, 1, 0, 0.1, nx, nt)
            u = GridFunction.from_callable(g, lambda x, t: 2 + np.exp(-np.pi**2 * t) * np.sin(np.pi * x))
            vals.append(abs(weak_residual(u, bump(g, 0.2, 0.8, 0.02, 0.08), prm)))
        assert 3.0 < vals[0] / vals[1] < 5.0 and 3.0 < vals[1] / vals[2] < 5.0

    def test_support_touching_boundary(self):
        g = SpaceTimeGrid(0, 1, 0, 1, 5, 5)
        u = GridFunction(g, np.full(g.shape, 2.0))
        with pytest.raises(ValueError, match="touches the boundary"):
            weak_residual(u, GridFunction(g, np.ones(g.shape)), Params(p=2, m=1, M=3))

    def test_sign_for_supersolution(self):
        # u = 2 + t solves w_t = 1 > 0 = Δu: a strict supersolution
        g = SpaceTimeGrid(0, 1, 0, 1, 21, 21)
        u = GridFunction.from_callable(g, lambda x, t: 2 + t + 0 * x)
        assert weak_residual(u, bump(g, 0.2, 0.8, 0.1, 0.9), Params(p=2, m=1, M=4)) > 0


class TestComparison:
    def test_identity(self):  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 1, 5, 5)
        u = GridFunction.from_callable(g, lambda x, t: 2 + x * t)
        rep = comparison_check(u, u)
        assert rep.max_violation == 0 and rep.holds and rep.location is None

    def test_boundary_violation_names_node(self):
        g = SpaceTimeGrid(0, 1, 0, 1, 5, 5)
        u = GridFunction(g, np.full(g.shape, 2.0))
        v = GridFunction(g, np.full(g.shape, 1.0))
        with pytest.raises(ValueError, match=r"n=0, i=0"):
            comparison_check(u, v)

    def test_interior_violation_location(self):
        g = SpaceTimeGrid(0, 1, 0, 1, 5, 5)
        vals = np.full(g.shape, 1.0)
        vals[2, 3] = vals[3, 1] = 1.5
        rep = comparison_check(GridFunction(g, vals), GridFunction(g, np.full(g.shape, 1.0)))
        assert rep.max_violation == 0.5 and rep.location == (2, 3)


class TestEstimator:
    def test_fit_and_clone(self):
        g = SpaceTimeGrid(0, 1, 0, 0.1, 11, 5)
        est = TrudingerSolver(p=3, m=1, M=4)
        est.fit(g, lambda x: 2 + x)
        assert est.solution_.grid == g and len(est.newton_iters_) == 4
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert not hasattr(twin, "solution_")
