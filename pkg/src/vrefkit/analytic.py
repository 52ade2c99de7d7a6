"""Closed-form design equations of the two-stage reference.

These serve three purposes: oracles for the numeric solver (with the
ideal model flags they must agree to within solver tolerance), seeds for
the solver, and hand-design tools (optimal K, DIBL compensation).

Oxide-capacitance ratios C_ox,L / C_ox,H are taken as the ratio of the
stored ``mu_cox`` products; the shared electron mobility cancels.
Threshold voltages here exclude DIBL (V_DS = 0), matching the
closed-form derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vrefkit.circuit import Stage1Config, Stage2Config, bracketed_root
from vrefkit.device import (
    BOLTZMANN,
    ELEMENTARY_CHARGE,
    T0,
    TransistorParams,
    thermal_voltage,
    threshold_voltage,
)

Q_OVER_K = ELEMENTARY_CHARGE / BOLTZMANN


class AssumptionError(ValueError):
    """A closed form was called outside its simplifying assumptions."""


class SingularityError(ArithmeticError):
    """A closed form is singular for the given constants."""


def _vth(dev: TransistorParams, T: float) -> float:
    return threshold_voltage(dev, T, 0.0)


def _cox_ratio(num: TransistorParams, den: TransistorParams) -> float:
    return num.dclass.mu_cox / den.dclass.mu_cox


# --------------------------------------------------------------------------
# stage 2

def vptat_eq5(m1: TransistorParams, m2: TransistorParams, temperature: float) -> float:
    """PTAT voltage from the M1/M2 current balance."""
    vt = thermal_voltage(temperature)
    return _vth(m1, temperature) - _vth(m2, temperature) + m1.n * vt * math.log(m2.aspect / m1.aspect)


def vref_eq4(stage2: Stage2Config, v_g4: float, temperature: float, rtol: float = 1e-12) -> float:
    """V_REF for a given M4 gate voltage, equal slopes and equal M3/M4 aspect."""
    m3, m4 = stage2.m3, stage2.m4
    if not math.isclose(m3.aspect, m4.aspect, rel_tol=rtol):
        raise AssumptionError("vref_eq4 requires (W/L)3 == (W/L)4")
    if not math.isclose(m3.n, m4.n, rel_tol=rtol):
        raise AssumptionError("vref_eq4 requires n_H == n_L")
    vt = thermal_voltage(temperature)
    return (_vth(m3, temperature) - _vth(m4, temperature) + v_g4
            + m3.n * vt * math.log(_cox_ratio(m4, m3))) / 2.0


def vref_eq6(stage2: Stage2Config, temperature: float) -> float:
    """V_REF of the TC-correction stage in terms of all four thresholds."""
    m1, m2, m3, m4 = stage2.m1, stage2.m2, stage2.m3, stage2.m4
    n_l, n_h = m4.n, m3.n
    vt = thermal_voltage(temperature)
    k = stage2.k_ratio * _cox_ratio(m4, m3)
    return (n_l * _vth(m3, temperature)
            + n_h * (_vth(m1, temperature) - _vth(m2, temperature) - _vth(m4, temperature))
            + n_h * n_l * vt * math.log(k)) / (n_h + n_l)


def dvref_dt_eq6(stage2: Stage2Config) -> float:
    """Analytic temperature derivative of :func:`vref_eq6` (constant in T)."""
    m1, m2, m3, m4 = stage2.m1, stage2.m2, stage2.m3, stage2.m4
    n_l, n_h = m4.n, m3.n
    k = stage2.k_ratio * _cox_ratio(m4, m3)
    return (n_l * m3.alpha + n_h * (m1.alpha - m2.alpha - m4.alpha)
            + n_h * n_l * math.log(k) / Q_OVER_K) / (n_h + n_l)


def optimal_k_eq8(stage2: Stage2Config) -> float:
    """Aspect-ratio product that zeroes dV_REF/dT."""
    m1, m2, m3, m4 = stage2.m1, stage2.m2, stage2.m3, stage2.m4
    n_l, n_h = m4.n, m3.n
    expo = Q_OVER_K * (n_h * (-m1.alpha + m2.alpha + m4.alpha) - n_l * m3.alpha) / (n_h * n_l)
    return _cox_ratio(m3, m4) * math.exp(expo)


def vref_eq9(stage2: Stage2Config, temperature: float = T0) -> float:
    """Temperature-compensated V_REF (valid when K satisfies the optimum).

    Written with thresholds at ``temperature`` and the alpha*T terms, so
    the cancellation of T is exercised numerically rather than assumed.
    """
    m1, m2, m3, m4 = stage2.m1, stage2.m2, stage2.m3, stage2.m4
    n_l, n_h = m4.n, m3.n
    T = temperature
    dvth1 = _vth(m1, T) - _vth(m2, T) - _vth(m4, T)
    dalpha = m2.alpha + m4.alpha - m1.alpha
    return (n_l * (_vth(m3, T) - m3.alpha * T) + n_h * (dvth1 + dalpha * T)) / (n_h + n_l)


# --------------------------------------------------------------------------
# stage 1

def k_r1(stage1: Stage1Config) -> float:
    return _cox_ratio(stage1.m12, stage1.m11) * stage1.m12.aspect / stage1.m11.aspect


def k_r2(stage1: Stage1Config) -> float:
    return _cox_ratio(stage1.m15, stage1.m14) * stage1.m15.aspect / stage1.m14.aspect


def k_r3(stage1: Stage1Config) -> float:
    return _cox_ratio(stage1.m13, stage1.m15) * stage1.m13.aspect / stage1.m15.aspect


def _slopes(stage1: Stage1Config) -> tuple[float, float]:
    return stage1.m12.n, stage1.m11.n


def vx_eq11(stage1: Stage1Config, v_o: float, temperature: float) -> float:
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    return (n_l * _vth(stage1.m11, temperature) - n_h * _vth(stage1.m12, temperature)
            + n_h * n_l * vt * math.log(k_r1(stage1)) + n_h * v_o) / (n_h + n_l)


def delta_vth2(stage1: Stage1Config, temperature: float) -> float:
    n_l, n_h = _slopes(stage1)
    T = temperature
    return (n_l * _vth(stage1.m11, T) - n_h * _vth(stage1.m12, T)
            - (n_h + n_l) * _vth(stage1.m13, T))


def delta_vth3(stage1: Stage1Config, temperature: float) -> float:
    n_l, n_h = _slopes(stage1)
    T = temperature
    return (n_l ** 2 * _vth(stage1.m11, T) - n_h * n_l * _vth(stage1.m12, T)
            - n_l * (n_h + n_l) * _vth(stage1.m13, T) + n_h * (n_h + n_l) * _vth(stage1.m15, T))


def id13_eq12(stage1: Stage1Config, v_o: float, temperature: float) -> float:
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    m13 = stage1.m13
    expo = ((delta_vth2(stage1, temperature) + n_h * n_l * vt * math.log(k_r1(stage1)) + n_h * v_o)
            / (n_h * (n_h + n_l) * vt))
    return m13.dclass.mu_cox * m13.aspect * vt * vt * math.exp(expo)


def id15_eq13(stage1: Stage1Config, temperature: float) -> float:
    vt = thermal_voltage(temperature)
    m15 = stage1.m15
    return (m15.dclass.mu_cox * m15.aspect * vt * vt
            * math.exp(-_vth(m15, temperature) / (m15.n * vt)))


def x_eq14(stage1: Stage1Config, v_o: float, temperature: float) -> float:
    """The bracketed ratio X = I_D13 / I_D15 at a given V_O."""
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    expo = ((delta_vth3(stage1, temperature) + n_h * n_l ** 2 * vt * math.log(k_r1(stage1))
             + n_h * n_l * v_o) / (n_h * n_l * (n_h + n_l) * vt))
    return k_r3(stage1) * math.exp(expo)


def vo_eq14(stage1: Stage1Config, temperature: float) -> float:
    """Exact ideal-model V_O: root of the implicit output equation."""
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    T = temperature
    base = (_vth(stage1.m14, T) + n_h * vt * math.log(k_r2(stage1))
            - n_h / n_l * _vth(stage1.m15, T))
    # X(v_o) < 1 bounds v_o from above
    n3 = n_h * n_l * (n_h + n_l) * vt
    v_hi = ((n3 * -math.log(k_r3(stage1)) - delta_vth3(stage1, T)
             - n_h * n_l ** 2 * vt * math.log(k_r1(stage1))) / (n_h * n_l))

    def g(v):
        x = x_eq14(stage1, v, T)
        if x >= 1.0:
            return math.inf, 1.0
        return v - base - n_h * vt * math.log1p(-x), 1.0 + n_h * vt * x / (1 - x) * (n_h * n_l) / n3

    lo = min(base, v_hi) - 1.0
    return bracketed_root(g, lo, v_hi, ftol=1e-15, what="V_O (ideal)").x


# --------------------------------------------------------------------------
# linearisation of ln(1 - X)

@dataclass(frozen=True)
class LinFit:
    c1: float
    c2: float
    r2: float
    x_range: tuple[float, float]

    def __call__(self, x):
        return self.c1 * np.asarray(x) + self.c2


REFERENCE_FIT = LinFit(c1=-3.64, c2=0.98, r2=0.98, x_range=(0.57, 0.85))


def fit_ln1mx(x_range: tuple[float, float] = (0.57, 0.85), samples: int = 1000) -> LinFit:
    """Least-squares line through ln(1 - X) on a uniform grid."""
    lo, hi = x_range
    if not 0.0 < lo < hi:
        raise ValueError(f"need 0 < lo < hi, got {x_range}")
    if hi >= 1.0:
        raise ValueError("upper end must be below 1 (log singularity)")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    x = np.linspace(lo, hi, samples)
    y = np.log1p(-x)
    a = np.column_stack([x, np.ones_like(x)])
    (c1, c2), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - (c1 * x + c2)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return LinFit(float(c1), float(c2), r2, (lo, hi))


def linearisation_error(fit: LinFit, x_range=None, samples: int = 2001) -> float:
    lo, hi = fit.x_range if x_range is None else x_range
    x = np.linspace(lo, hi, samples)
    return float(np.max(np.abs(np.log1p(-x) - fit(x))))


@dataclass(frozen=True)
class DesignConstants:
    k: float
    k_r1: float
    k_r2: float
    k_r3: float
    n_r: float
    c3: float
    c4: float
    delta_vth1: float
    delta_vth2: float
    delta_vth3: float
    delta_vth4: float
    delta_alpha: float

    def __post_init__(self):
        for name in ("k", "k_r1", "k_r2", "k_r3", "n_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def design_constants(stage1: Stage1Config, stage2: Stage2Config, fit: LinFit | None = None,
                     temperature: float = T0) -> DesignConstants:
    fit = fit_ln1mx() if fit is None else fit
    n_l, n_h = _slopes(stage1)
    c3 = fit.c1 / (n_l * (n_l + n_h))
    dv3 = delta_vth3(stage1, temperature)
    m1, m2, m4 = stage2.m1, stage2.m2, stage2.m4
    return DesignConstants(
        k=stage2.k_ratio, k_r1=k_r1(stage1), k_r2=k_r2(stage1), k_r3=k_r3(stage1),
        n_r=n_h / n_l, c3=c3, c4=(fit.c1 - 1.0) / fit.c1,
        delta_vth1=_vth(m1, T0) - _vth(m2, T0) - _vth(m4, T0),
        delta_vth2=delta_vth2(stage1, temperature), delta_vth3=dv3,
        delta_vth4=_vth(stage1.m14, temperature) - n_h / n_l * _vth(stage1.m15, temperature) + c3 * dv3,
        delta_alpha=m2.alpha + m4.alpha - m1.alpha,
    )


def vo_eq16(stage1: Stage1Config, temperature: float, fit: LinFit | None = None) -> float:
    """Linearised V_O in its compact closed form, term for term.

    The closed form drops the ln K_R2 and ln K_R3 terms of the exact
    output equation, so it is a design aid and not an accurate predictor;
    :func:`vo_linearised` keeps them.
    """
    fit = fit_ln1mx() if fit is None else fit
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    c3 = fit.c1 / (n_l * (n_l + n_h))
    den = 1.0 - c3 * n_h * n_l
    if abs(den) < 1e-9:
        raise SingularityError("1 - C3 n_H n_L vanishes")
    dv4 = (_vth(stage1.m14, temperature) - n_h / n_l * _vth(stage1.m15, temperature)
           + c3 * delta_vth3(stage1, temperature))
    return (dv4 + n_h * vt * (c3 * n_l ** 2 * math.log(k_r1(stage1)) + fit.c2)) / den


def vo_linearised(stage1: Stage1Config, temperature: float, fit: LinFit | None = None) -> float:
    """V_O with ln(1 - X) replaced by C1 X + C2 in the exact output equation."""
    fit = fit_ln1mx() if fit is None else fit
    n_l, n_h = _slopes(stage1)
    vt = thermal_voltage(temperature)
    T = temperature
    base = (_vth(stage1.m14, T) + n_h * vt * math.log(k_r2(stage1))
            - n_h / n_l * _vth(stage1.m15, T) + n_h * vt * fit.c2)
    n3 = n_h * n_l * (n_h + n_l) * vt

    def g(v):
        x = x_eq14(stage1, v, T)
        return v - base - n_h * vt * fit.c1 * x, 1.0 - n_h * vt * fit.c1 * x * (n_h * n_l) / n3

    # g is increasing for c1 < 0; the root lies within a volt of base
    return bracketed_root(g, base - 2.0, base + 2.0, ftol=1e-15, what="V_O (linearised)").x


def dibl_compensation_eq18(lambda_d15: float, n_r: float, c1: float) -> float:
    """M12 DIBL factor that cancels M15's DIBL in the linearised V_O."""
    if c1 == 0:
        raise SingularityError("C1 = 0")
    c4 = (c1 - 1.0) / c1
    return c4 * (1.0 + n_r) * lambda_d15


# --------------------------------------------------------------------------
# line sensitivity

def dvref_dvo_eq19(stage2: Stage2Config) -> float:
    n_l, n_h = stage2.m4.n, stage2.m3.n
    return n_h / (n_h + n_l) * (stage2.m2.lambda_d + stage2.m4.lambda_d)


def ls2_eq20(stage2: Stage2Config, v_ref: float) -> float:
    """Stage-2 line sensitivity as a fraction per volt (x100 for %/V, x1e6 for ppm/V)."""
    if v_ref == 0:
        raise SingularityError("V_REF = 0")
    return dvref_dvo_eq19(stage2) / v_ref


def ls_stack(ls1: float, ls2: float) -> float:
    """Two-stage line sensitivity.

    ``ls1`` is the dimensionless first-stage transfer dV_O/dV_DD and ``ls2``
    the second stage's normalised sensitivity in any unit per volt; the
    result carries the unit of ``ls2``.
    """
    return ls1 * ls2
