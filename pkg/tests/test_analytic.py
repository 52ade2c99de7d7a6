import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrefkit import analytic as A
from vrefkit.analysis import with_k
from vrefkit.circuit import ModelFlags, solve_stage1, solve_stage2
from vrefkit.device import (
    T0,
    BiasPoint,
    DeviceClassParams,
    OxideClass,
    drain_current,
    thermal_voltage,
)

IDEAL = ModelFlags.ideal()
TEMPS = [273.15, 293.15, 313.15, 333.15, 353.15]


@pytest.fixture(scope="module")
def s2(cfg):
    return cfg.effective_stage2()


@pytest.fixture(scope="module")
def s2_opt(cfg):
    base = cfg.effective_stage2()
    return with_k(cfg, A.optimal_k_eq8(base)).effective_stage2()


class TestVptat:
    def test_identical_devices(self, s2):
        assert A.vptat_eq5(s2.m1, s2.m1, 300.0) == 0.0

    def test_threshold_difference(self, s2):
        m2 = s2.m2.with_(w=s2.m1.w, l=s2.m1.l)
        assert A.vptat_eq5(s2.m1, m2, T0) == pytest.approx(0.031, abs=0.010)

    def test_ln_e(self, s2):
        cls = DeviceClassParams(OxideClass.THIN, 300e-6, 1.2)
        m1 = s2.m1.with_(dclass=cls, vth0=0.4, alpha=-1e-3)
        m2 = m1.with_(w=m1.w * math.e)
        T = 0.025 * 1.602176634e-19 / 1.380649e-23
        assert A.vptat_eq5(m1, m2, T) == pytest.approx(0.030, rel=1e-12)


def _symmetric_pair(s2, rng):
    """M3/M4 with equal aspect and slope factor, so the equal-pair V_REF form applies."""
    thick = DeviceClassParams(OxideClass.THICK, rng.uniform(80e-6, 200e-6), s2.m4.n)
    m3 = s2.m3.with_(dclass=thick, w=s2.m4.w, l=s2.m4.l,
                     vth0=rng.uniform(0.5, 0.7), alpha=-rng.uniform(0.5e-3, 1.5e-3))
    m4 = s2.m4.with_(vth0=rng.uniform(0.35, 0.45))
    m2 = s2.m2.with_(w=s2.m2.w * rng.uniform(0.5, 2.0), vth0=rng.uniform(0.38, 0.43))
    return replace(s2, m2=m2, m3=m3, m4=m4)


class TestVref:
    def test_eq4_zero(self, s2):
        cls = s2.m4.dclass
        m3 = s2.m4.with_(name="m3", dclass=cls)
        st2 = replace(s2, m3=m3)
        assert A.vref_eq4(st2, 0.0, T0) == pytest.approx(0.0, abs=1e-15)

    def test_eq4_slope_half(self, s2):
        st2 = _symmetric_pair(s2, np.random.default_rng(0))
        a = A.vref_eq4(st2, 0.1, 300.0)
        b = A.vref_eq4(st2, 0.2, 300.0)
        assert b - a == pytest.approx(0.05, abs=1e-15)

    def test_eq4_assumptions(self, s2):
        with pytest.raises(A.AssumptionError):
            A.vref_eq4(s2, 0.1, 300.0)

    def test_eq4_matches_eq6(self, s2):
        rng = np.random.default_rng(1)
        for _ in range(50):
            st2 = _symmetric_pair(s2, rng)
            T = rng.uniform(250, 400)
            vp = A.vptat_eq5(st2.m1, st2.m2, T)
            assert A.vref_eq4(st2, vp, T) == pytest.approx(A.vref_eq6(st2, T), abs=1e-12)

    def test_eq6_zero(self, s2):
        m = s2.m1
        st2 = replace(s2, m2=m, m3=m, m4=m)
        assert A.vref_eq6(st2, 310.0) == pytest.approx(0.0, abs=1e-15)

    def test_eq6_default_band(self, s2):
        assert 0.100 <= A.vref_eq6(s2, T0) <= 0.140

    @pytest.mark.parametrize("T", TEMPS)
    def test_eq6_numeric(self, s2, T):
        assert solve_stage2(s2, 1.0, T, IDEAL).v_ref == pytest.approx(A.vref_eq6(s2, T), abs=1e-6)


class TestOptimalK:
    def test_unity(self, s2):
        m = s2.m1
        st2 = replace(s2, m2=m, m3=m, m4=m)
        assert A.optimal_k_eq8(st2) == pytest.approx(1.0, abs=1e-15)

    def test_default_range(self, s2):
        assert 3.0 <= A.optimal_k_eq8(s2) <= 4.6

    @settings(max_examples=50)
    @given(a=st.lists(st.floats(0.3e-3, 1.5e-3), min_size=4, max_size=4),
           n_l=st.floats(1.05, 1.6), n_h=st.floats(1.05, 1.8))
    def test_high_precision_oracle(self, s2, a, n_l, n_h):
        thin = DeviceClassParams(OxideClass.THIN, 300e-6, n_l)
        thick = DeviceClassParams(OxideClass.THICK, 120e-6, n_h)
        st2 = replace(s2, m1=s2.m1.with_(dclass=thin, alpha=-a[0]),
                      m2=s2.m2.with_(dclass=thin, alpha=-a[1]),
                      m3=s2.m3.with_(dclass=thick, alpha=-a[2]),
                      m4=s2.m4.with_(dclass=thin, alpha=-a[3]))
        mpmath.mp.dps = 40
        q_k = mpmath.mpf("1.602176634e-19") / mpmath.mpf("1.380649e-23")
        a1, a2, a3, a4 = (-mpmath.mpf(x) for x in a)
        nl, nh = mpmath.mpf(n_l), mpmath.mpf(n_h)
        oracle = mpmath.mpf(120) / 300 * mpmath.exp(q_k * (nh * (-a1 + a2 + a4) - nl * a3) / (nh * nl))
        assert A.optimal_k_eq8(st2) == pytest.approx(float(oracle), rel=1e-12)

    def test_zero_slope_at_optimum(self, s2_opt):
        assert abs(A.dvref_dt_eq6(s2_opt)) < 1e-9

    def test_slope_matches_finite_difference(self, s2):
        h = 0.5
        fd = (A.vref_eq6(s2, T0 + h) - A.vref_eq6(s2, T0 - h)) / (2 * h)
        assert A.dvref_dt_eq6(s2) == pytest.approx(fd, abs=1e-12)


class TestEq9:
    def test_temperature_independent(self, s2_opt):
        v = [A.vref_eq9(s2_opt, T) for T in TEMPS]
        assert max(v) - min(v) < 1e-12

    @pytest.mark.parametrize("T", TEMPS)
    def test_equals_eq6_at_optimum(self, s2_opt, T):
        assert A.vref_eq9(s2_opt, T) == pytest.approx(A.vref_eq6(s2_opt, T), abs=1e-12)

    def test_isolated_term(self, s2):
        # delta_vth1 = 0 and delta_alpha = 0: only the M3 term survives
        m1 = s2.m1.with_(vth0=s2.m2.vth0 + s2.m4.vth0, alpha=s2.m2.alpha + s2.m4.alpha)
        st2 = replace(s2, m1=m1)
        n_l, n_h = st2.m4.n, st2.m3.n
        expect = n_l * (st2.m3.vth0 - st2.m3.alpha * T0) / (n_h + n_l)
        assert A.vref_eq9(st2, 310.0) == pytest.approx(expect, abs=1e-12)


class TestStage1Closed:
    @pytest.mark.parametrize("T", TEMPS)
    def test_numeric_oracles(self, cfg, T):
        s1 = cfg.stage1
        sol = solve_stage1(s1, 1.2, T, IDEAL)
        assert sol.v_x == pytest.approx(A.vx_eq11(s1, sol.v_o, T), abs=1e-6)
        assert sol.i_d13 == pytest.approx(A.id13_eq12(s1, sol.v_o, T), rel=1e-6)
        assert sol.i_d15 == pytest.approx(A.id15_eq13(s1, T), rel=1e-6)

    def test_eq12_composition(self, cfg):
        s1 = cfg.stage1
        T, vo = 310.0, 0.36
        vx = A.vx_eq11(s1, vo, T)
        i13 = drain_current(s1.m13, BiasPoint(vx, vo, T), drain_factor=False, dibl=False)
        assert A.id13_eq12(s1, vo, T) == pytest.approx(i13, rel=1e-6)

    def test_eq13_zero_threshold(self, cfg):
        s1 = cfg.stage1
        m15 = s1.m15.with_(vth0=0.0)
        st1 = replace(s1, m15=m15)
        vt = thermal_voltage(T0)
        assert A.id15_eq13(st1, T0) == pytest.approx(m15.dclass.mu_cox * m15.aspect * vt * vt,
                                                     rel=1e-15)


class TestFit:
    def test_refit_vs_reference(self):
        fit = A.fit_ln1mx((0.57, 0.85), 1000)
        assert fit.c1 == pytest.approx(A.REFERENCE_FIT.c1, abs=0.05)
        assert fit.r2 == pytest.approx(A.REFERENCE_FIT.r2, abs=0.01)
        # the reference intercept is not reproducible by any fit of ln(1 - X)
        assert fit.c2 == pytest.approx(1.2959, abs=1e-3)

    @pytest.mark.parametrize("x0", [0.3, 0.6, 0.8])
    def test_tangent_limit(self, x0):
        fit = A.fit_ln1mx((x0 - 1e-3, x0 + 1e-3), 200)
        assert fit.c1 == pytest.approx(-1 / (1 - x0), rel=0.01)

    @given(lo=st.floats(0.05, 0.6), width=st.floats(0.05, 0.3), n=st.integers(10, 500))
    def test_orthogonality(self, lo, width, n):
        fit = A.fit_ln1mx((lo, lo + width), n)
        x = np.linspace(lo, lo + width, n)
        resid = np.log1p(-x) - fit(x)
        assert abs(float(resid @ x)) < 1e-9
        assert abs(float(resid.sum())) < 1e-9

    def test_r2_density_invariant(self):
        r = [A.fit_ln1mx((0.57, 0.85), n).r2 for n in (100, 1000, 10000)]
        assert max(r) - min(r) < 5e-3

    @pytest.mark.parametrize("rng", [(0.5, 1.0), (0.0, 0.5), (0.6, 0.5)])
    def test_bad_range(self, rng):
        with pytest.raises(ValueError):
            A.fit_ln1mx(rng)


class TestEq16:
    def test_linearised_within_bound(self, cfg):
        s1 = cfg.stage1
        fit = A.fit_ln1mx()
        for T in TEMPS:
            vo = solve_stage1(s1, 1.2, T, IDEAL).v_o
            x = A.x_eq14(s1, vo, T)
            x_rng = (min(x, 0.57), max(x, 0.85))
            bound = s1.m11.n * thermal_voltage(T) * A.linearisation_error(fit, x_rng)
            assert abs(A.vo_linearised(s1, T, fit) - vo) <= bound

    def test_stripped_fit(self, cfg):
        s1 = cfg.stage1
        zero = A.LinFit(0.0, 0.0, 0.0, (0.57, 0.85))
        expect = s1.m14.vth0 - s1.m11.n / s1.m12.n * s1.m15.vth0
        assert A.vo_eq16(s1, T0, zero) == pytest.approx(expect, abs=1e-15)

    def test_affine_readoff(self, cfg):
        s1 = cfg.stage1
        fit = A.fit_ln1mx()
        d = 1e-3
        n_l, n_h = s1.m12.n, s1.m11.n
        c3 = fit.c1 / (n_l * (n_l + n_h))
        den = 1 - c3 * n_h * n_l
        base = A.vo_eq16(s1, T0, fit)
        up14 = A.vo_eq16(replace(s1, m14=s1.m14.with_(vth0=s1.m14.vth0 + d)), T0, fit)
        assert up14 - base == pytest.approx(d / den, rel=1e-9)
        # V_TH15 also enters through delta_vth3
        up15 = A.vo_eq16(replace(s1, m15=s1.m15.with_(vth0=s1.m15.vth0 + d)), T0, fit)
        coef = (-n_h / n_l + c3 * n_h * (n_h + n_l)) / den
        assert up15 - base == pytest.approx(coef * d, rel=1e-9)

    def test_singular(self, cfg):
        s1 = cfg.stage1
        n_l, n_h = s1.m12.n, s1.m11.n
        c1 = (n_l + n_h) / n_h
        with pytest.raises(A.SingularityError):
            A.vo_eq16(s1, T0, A.LinFit(c1, 0.0, 0.0, (0.57, 0.85)))


class TestDibl:
    def test_reference_constant(self):
        n_r, lam = 1.16, 0.03
        got = A.dibl_compensation_eq18(lam, n_r, -3.64)
        assert got / ((1 + n_r) * lam) == pytest.approx(1.2747, abs=1e-4)

    def test_zero(self):
        assert A.dibl_compensation_eq18(0.0, 1.16, -3.64) == 0.0

    def test_c1_zero(self):
        with pytest.raises(A.SingularityError):
            A.dibl_compensation_eq18(0.03, 1.16, 0.0)

    def test_default_m12_uses_refit(self, cfg):
        s1 = cfg.stage1
        fit = A.fit_ln1mx()
        expect = A.dibl_compensation_eq18(s1.m15.lambda_d, s1.m11.n / s1.m12.n, fit.c1)
        assert s1.m12.lambda_d == pytest.approx(expect, rel=1e-12)

    def test_lowers_midrange_slope(self, cfg):
        def slope(c):
            f = lambda v: solve_stage1(c.stage1, v, T0, c.flags).v_o
            return abs(f(1.25) - f(1.15)) / 0.1

        assert slope(cfg) < slope(cfg.with_device("m12", lambda_d=0.0))


class TestLineSensitivity:
    def test_no_dibl(self, s2):
        st2 = replace(s2, m2=s2.m2.with_(lambda_d=0.0), m4=s2.m4.with_(lambda_d=0.0))
        assert A.ls2_eq20(st2, 0.12) == 0.0

    def test_eq19_finite_difference(self, cfg, s2):
        sol = solve_stage2(s2, 1.0, T0, cfg.flags)
        assert sol.dvref_dsupply == pytest.approx(A.dvref_dvo_eq19(s2), rel=0.05)

    def test_stack(self):
        assert A.ls_stack(0.0, 1234.0) == 0.0
        assert A.ls_stack(0.05, 1000.0) == pytest.approx(50.0)

    def test_zero_vref(self, s2):
        with pytest.raises(A.SingularityError):
            A.ls2_eq20(s2, 0.0)


class TestDesignConstants:
    def test_positive_ratios(self, cfg, s2):
        dc = A.design_constants(cfg.stage1, s2)
        assert min(dc.k, dc.k_r1, dc.k_r2, dc.k_r3, dc.n_r) > 0
        c1 = A.fit_ln1mx().c1
        assert dc.c4 == pytest.approx((c1 - 1) / c1)
