import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from trudinger_lab.grid import Cylinder, GridFunction, SpaceTimeGrid
from trudinger_lab.metrology import (
    HALF_CYLINDER,
    REFINEMENT_COLUMNS,
    BracketError,
    PhiProfile,
    PsiSpec,
    RegularityMeter,
    certify_phi,
    combined_constant,
    default_base_points,
    fitted_time_exponent,
    holder_constant,
    lipschitz_constant,
    minimal_L_certificate,
    normalize_to_unit,
    psi_max,
    time_holder_constant,
    write_refinement_csv,
)

HOLDER = PhiProfile.holder(0.5)
LIP = PhiProfile.lipschitz(0.5)


def unit(f, nx=41, nt=21):
    g = SpaceTimeGrid(-1.0, 1.0, -1.0, 0.0, nx, nt)
    return GridFunction.from_callable(g, f)


def const(x, t):
    return 3.0 + 0 * x + 0 * t


def linear(x, t):
    return 2 + x + 0 * t


def wavy(x, t):
    return 2 + np.sin(2 * x) * np.exp(t) + 0.3 * t


class TestPairConstants:
    def test_lipschitz_examples(self):
        assert lipschitz_constant(unit(const)) == 0  # [TRIVIAL]
        assert lipschitz_constant(unit(linear)) == pytest.approx(1.0, abs=1e-12)  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 1, 41, 5)
        kink = GridFunction.from_callable(g, lambda x, t: 2 + np.abs(x - 0.5) + 0 * t)
        # [DERIVED] brute-force pair scan
        v, x = kink.values, g.x
        brute = max(abs(v[n, i] - v[n, j]) / abs(x[i] - x[j]) for n in range(g.nt) for i in range(41) for j in range(i))
        assert lipschitz_constant(kink) == pytest.approx(brute, rel=1e-12)
        assert brute == pytest.approx(1.0)

    def test_holder_examples(self):
        assert holder_constant(unit(const), None, 0.5) == 0  # [TRIVIAL]
        g = SpaceTimeGrid(0, 1, 0, 1, 21, 3)
        u = GridFunction.from_callable(g, linear)
        assert holder_constant(u, None, 0.5) == pytest.approx(1.0)  # [DERIVED] largest separation
        assert holder_constant(unit(linear), None, 0.5) == pytest.approx(np.sqrt(2.0))

    def test_holder_to_lipschitz(self):  # [DERIVED] consistency as alpha -> 1
        u = unit(wavy)
        L = lipschitz_constant(u)
        for a in (0.99, 0.999, 0.9999):
            H = holder_constant(u, None, a)
            assert L * u.grid.dx ** (1 - a) - 1e-12 <= H <= L * 2 ** (1 - a) + 1e-12
        assert holder_constant(u, None, 0.9999) == pytest.approx(L, rel=1e-3)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.5, 1.5])
    def test_holder_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            holder_constant(unit(linear), None, alpha)

    def test_time_holder(self):  # [TRIVIAL]
        assert time_holder_constant(unit(const)) == 0
        assert time_holder_constant(unit(linear)) == 0
        g = SpaceTimeGrid(0, 1, 0, 1, 3, 101)
        u = GridFunction.from_callable(g, lambda x, t: 2 + np.sqrt(t) + 0 * x)
        assert time_holder_constant(u) == pytest.approx(1.0)

    def test_combined(self):
        assert combined_constant(unit(const)) == 0  # [TRIVIAL]
        assert combined_constant(unit(linear)) == pytest.approx(1.0)  # [DERIVED] pair scan
        # [DERIVED] same-time and same-position pairs are included and the triangle
        # inequality bounds mixed pairs, so the combined constant is max(L, H)
        u = unit(wavy)
        top = max(lipschitz_constant(u), time_holder_constant(u))
        assert combined_constant(u) == pytest.approx(top, rel=1e-12)
        assert combined_constant(u, window=(3, 2)) <= combined_constant(u) + 1e-15

    def test_region_monotone(self):
        u = unit(wavy)
        for fn in (lipschitz_constant, time_holder_constant, combined_constant):
            assert fn(u, HALF_CYLINDER) <= fn(u) + 1e-15
        assert holder_constant(u, HALF_CYLINDER, 0.3) <= holder_constant(u, None, 0.3) + 1e-15

    def test_fitted_exponent(self):
        assert np.isnan(fitted_time_exponent(unit(const)))
        g = SpaceTimeGrid(0, 1, 0, 1, 3, 129)
        lin = GridFunction.from_callable(g, lambda x, t: 2 + t + 0 * x)
        assert fitted_time_exponent(lin) == pytest.approx(1.0, abs=1e-9)
        root = GridFunction.from_callable(g, lambda x, t: 2 + np.sqrt(t) + 0 * x)
        assert fitted_time_exponent(root) == pytest.approx(0.5, abs=1e-9)


class TestProfiles:
    def test_holder(self):  # [DERIVED] symbolic evaluation
        s = np.array([0.01, 0.5, 2.0])
        np.testing.assert_allclose(HOLDER.dphi(s), 0.5 * s**-0.5)
        np.testing.assert_allclose(HOLDER.d2phi(s), -0.25 * s**-1.5)
        cert = certify_phi(HOLDER)
        assert cert.passed and cert.phi_at_zero == 0

    def test_lipschitz_defaults(self):  # [PAPER] slope of φ stays in [3/4, 1]
        assert LIP.beta == 1.25 and LIP.kappa == pytest.approx(0.8 * 2**-2.25)
        cert = certify_phi(LIP)
        assert cert.passed and cert.c_phi >= 0.75
        assert LIP.dphi(np.array([1e-9])).item() <= 1.0

    def test_linear_fails(self):  # [TRIVIAL]
        lin = PhiProfile.custom(lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s), "linear")
        cert = certify_phi(lin)
        assert not cert.passed and cert.concavity_margin == 0

    def test_holder_alpha(self):
        with pytest.raises(ValueError):
            PhiProfile.holder(1.0)


class TestPsi:
    def test_constant(self):  # [TRIVIAL]
        u = unit(const)
        for prof in (HOLDER, LIP):
            assert psi_max(u, PsiSpec(1.0, 1.0, 0.25, -0.25, -0.25, prof)).max_value <= 0

    def test_huge_L(self):  # [TRIVIAL] diagonal wins
        res = psi_max(unit(wavy), PsiSpec(1e6, 4.0, 0.1, 0.2, -0.2, LIP))
        assert res.max_value <= 0 and res.argmax[0] == res.argmax[1]

    def test_below_true_constant(self):  # [DERIVED] explicit positive triple
        u = unit(linear)
        spec = PsiSpec(0.5, 0.1, 0.25, -0.25, 0.0, LIP)
        # x = 0.25, y = -0.25, t = 0: 0.5 - 0.5 φ(0.5) > 0
        triple = 0.5 - 0.5 * float(LIP.phi(0.5))
        assert triple > 0
        assert psi_max(u, spec).max_value >= triple - 1e-15

    def test_monotone_in_L_and_K(self):
        u = unit(wavy)
        vals_L = [psi_max(u, PsiSpec(L, 2.0, 0.0, 0.1, -0.1, LIP)).max_value for L in (0.2, 0.5, 1.0, 2.0, 4.0)]
        vals_K = [psi_max(u, PsiSpec(0.5, K, 0.0, 0.1, -0.1, LIP)).max_value for K in (0.0, 1.0, 4.0, 16.0)]
        assert all(b <= a for a, b in zip(vals_L, vals_L[1:]))
        assert all(b <= a for a, b in zip(vals_K, vals_K[1:]))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1.0, 3.0), min_size=21 * 11, max_size=21 * 11), st.floats(0.1, 0.9))
    def test_zero_K_holder_bound(self, vals, alpha):  # [DERIVED] |x-y|^(1-alpha) <= 2^(1-alpha)
        g = SpaceTimeGrid(-1.0, 1.0, -1.0, 0.0, 21, 11)
        u = GridFunction(g, np.reshape(vals, g.shape))
        L = lipschitz_constant(u) * 2 ** (1 - alpha)
        if L == 0:
            return
        res = psi_max(u, PsiSpec(L, 0.0, 0.0, 0.1, -0.2, PhiProfile.holder(alpha)))
        assert res.max_value <= 1e-12

    def test_threads(self):
        u = unit(wavy, 61, 31)
        spec = PsiSpec(0.7, 3.0, 0.1, -0.1, -0.3, LIP)
        assert psi_max(u, spec) == psi_max(u, spec, threads=3)

    def test_base_outside(self):
        with pytest.raises(ValueError, match="half cylinder"):
            psi_max(unit(linear), PsiSpec(1.0, 1.0, 0.75, 0.0, 0.0, LIP))
        with pytest.raises(ValueError):
            PsiSpec(0.0, 1.0, 0.0, 0.0, 0.0, LIP)


class TestCertificate:
    def test_constant(self):  # [TRIVIAL]
        cert = minimal_L_certificate(unit(const), LIP, 1.0, [(0.0, 0.05, 0.0)])
        assert cert.L_star == 0.0 and cert.iterations == 0

    def test_linear_holder(self):  # [DERIVED] two independent estimators
        u = unit(linear, 81, 41)
        bases = [(0.5, -0.5, -0.25), (-0.5, 0.5, -0.25)]
        cert = minimal_L_certificate(u, HOLDER, 16.0, bases)
        ref = holder_constant(u, HALF_CYLINDER, 0.5)
        assert abs(cert.L_star / ref - 1) < 0.10
        assert cert.max_psi_at_L_star <= 0

    def test_bracket_error(self):
        with pytest.raises(BracketError) as err:
            minimal_L_certificate(unit(linear), LIP, 0.1, [(0.25, -0.25, 0.0)], L_hi=0.2)
        assert err.value.L_hi == 0.2

    def test_rejects_uncertified_profile(self):
        lin = PhiProfile.custom(lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s))
        with pytest.raises(ValueError, match="admissibility"):
            minimal_L_certificate(unit(linear), lin, 1.0, [(0.0, 0.05, 0.0)])

    def test_bisection_tolerance(self):
        u = unit(wavy)
        bases = default_base_points(u.grid, 5, 2)
        cert = minimal_L_certificate(u, LIP, 8.0, bases)
        lo, hi = cert.bracket
        below = cert.L_star - 2e-3 * (hi - lo)
        assert cert.max_psi_at_L_star <= 0
        assert below <= 0 or max(psi_max(u, PsiSpec(below, 8.0, *b, LIP)).max_value for b in bases) > 0

    def test_default_base_points(self):
        g = SpaceTimeGrid(-1.0, 1.0, -1.0, 0.0, 41, 21)
        pts = default_base_points(g)
        assert len(pts) == 2 * 9 * 3
        assert all(abs(x) <= 0.5 + 1e-12 and abs(y) <= 0.5 + 1e-12 and -0.5 < t <= 0 for x, y, t in pts)


class TestReport:
    def test_normalize(self):
        g = SpaceTimeGrid(-2.0, 2.0, 0.0, 2.0, 41, 21)
        u = GridFunction.from_callable(g, lambda x, t: 2 + x + t)
        v = normalize_to_unit(u, Cylinder(2.0, 0.0, 2.0))
        assert v.grid.x_min == -1 and v.grid.x_max == 1 and v.grid.t_max == 0
        assert v.values.shape == (20, 41)  # the bottom slice t = 0 is open

    def test_meter(self, tmp_path):
        u = unit(wavy)
        meter = RegularityMeter(alphas=(0.5, 0.75)).fit(u)
        rep = meter.report_
        assert rep.lipschitz_L == pytest.approx(lipschitz_constant(u))
        assert set(rep.holder_C) == {0.5, 0.75}
        assert meter.K_ == pytest.approx(8 * (u.values.max() - u.values.min()))
        assert json.loads(rep.to_json())["psi_certificate"]["L_star"] == meter.certificate_.L_star
        assert clone(meter).get_params()["alphas"] == (0.5, 0.75)
        path = tmp_path / "r.csv"
        write_refinement_csv(path, [(0, rep), (1, rep)])
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(REFINEMENT_COLUMNS) and len(lines) == 3

    def test_nan_serializes_as_null(self):
        rep = RegularityMeter().fit(unit(const)).report_
        assert json.loads(rep.to_json())["fitted_time_exponent"] is None
