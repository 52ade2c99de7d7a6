"""Sweeps, figures of merit and the design studies built on them."""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from vrefkit import analytic
from vrefkit.circuit import (
    CircuitConfig,
    OperatingPoint,
    solve_full,
    solve_stage2_only,
)

KELVIN = 273.15
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# Temperature studies run at this supply unless told otherwise. At 0.4 V
# the stage-1 source device loses its headroom above ~50 degC with the
# illustrative parameter set; 1.2 V is the mid-range supply.
TC_VDD = 1.2


class DegenerateRangeWarning(UserWarning):
    pass


class NonUnimodalWarning(UserWarning):
    pass


def config_digest(cfg: CircuitConfig) -> str:
    return hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]


def _box(series, grid, mean) -> float:
    series = np.asarray(series, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if series.size < 2:
        warnings.warn("fewer than two points: metric set to 0", DegenerateRangeWarning, stacklevel=3)
        return 0.0
    span = float(grid.max() - grid.min())
    if span == 0.0:
        warnings.warn("zero-width range: metric set to 0", DegenerateRangeWarning, stacklevel=3)
        return 0.0
    mean = float(np.mean(series)) if mean is None else mean
    return float((series.max() - series.min()) / (abs(mean) * span) * 1e6)


def tc_box(series, grid, mean: Optional[float] = None) -> float:
    """Box-method temperature coefficient, ppm/degC.

    (max - min) / (mean * temperature span). ``grid`` may be in K or degC.
    """
    return _box(series, grid, mean)


def ls_box(series, grid, mean: Optional[float] = None) -> float:
    """Box-method line sensitivity, ppm/V."""
    return _box(series, grid, mean)


@dataclass
class SweepResult:
    axis: str
    grid: np.ndarray
    vref: np.ndarray
    v_o: np.ndarray
    v_ptat: np.ndarray
    power: np.ndarray
    config_digest: str
    points: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("sweep grid must be strictly increasing")

    @property
    def grid_c(self) -> np.ndarray:
        """Temperature grid in degC (temperature sweeps only)."""
        return self.grid - KELVIN

    @property
    def max_residual(self) -> float:
        return max((p.residual for p in self.points), default=0.0)


@dataclass(frozen=True)
class Metrics:
    tc: float
    ls: float
    p_min: float
    p_max: float
    vref_mean: float


def _solver(with_stage1: bool) -> Callable[[CircuitConfig, float, float], OperatingPoint]:
    return solve_full if with_stage1 else solve_stage2_only


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def _collect(axis, grid, ops, cfg, warns) -> SweepResult:
    return SweepResult(
        axis=axis, grid=np.asarray(grid, dtype=float),
        vref=np.array([p.v_ref for p in ops]), v_o=np.array([p.v_o for p in ops]),
        v_ptat=np.array([p.v_ptat for p in ops]), power=np.array([p.power for p in ops]),
        config_digest=config_digest(cfg), points=ops, warnings=warns)


def _run(cfg, axis, grid, point):
    ops, warns = [], []
    for x in grid:
        try:
            op = point(x)
        except Exception as exc:
            raise type(exc)(f"{axis} sweep failed at {x!r}: {exc}") from exc
        ops.append(op)
        warns.extend(f"{axis}={x:.6g}: {w}" for w in op.warnings)
    return _collect(axis, grid, ops, cfg, warns)


def sweep_temperature(cfg: CircuitConfig, vdd: float = TC_VDD, t_range=(0.0, 80.0),
                      step: float = 1.0, with_stage1: bool = True) -> SweepResult:
    """V_REF etc. over temperature (degC range, K grid)."""
    solve = _solver(with_stage1)
    grid = _grid(t_range[0], t_range[1], step) + KELVIN
    return _run(cfg, "temperature", grid, lambda T: solve(cfg, vdd, T))


def sweep_supply(cfg: CircuitConfig, t_c: float = 25.0, vdd_range=(0.4, 2.0), step: float = 0.01,
                 with_stage1: bool = True) -> SweepResult:
    solve = _solver(with_stage1)
    grid = _grid(vdd_range[0], vdd_range[1], step)
    return _run(cfg, "vdd", grid, lambda v: solve(cfg, v, t_c + KELVIN))


def metrics(temp_sweep: Optional[SweepResult] = None,
            supply_sweep: Optional[SweepResult] = None) -> Metrics:
    tc = tc_box(temp_sweep.vref, temp_sweep.grid) if temp_sweep is not None else math.nan
    ls = ls_box(supply_sweep.vref, supply_sweep.grid) if supply_sweep is not None else math.nan
    sweeps = [s for s in (temp_sweep, supply_sweep) if s is not None]
    power = np.concatenate([s.power for s in sweeps])
    vref = np.concatenate([s.vref for s in sweeps])
    return Metrics(tc, ls, float(power.min()), float(power.max()), float(vref.mean()))


def temperature_coefficient(cfg: CircuitConfig, vdd: float = TC_VDD, t_range=(0.0, 80.0),
                            step: float = 1.0, with_stage1: bool = True) -> float:
    s = sweep_temperature(cfg, vdd, t_range, step, with_stage1)
    return tc_box(s.vref, s.grid)


def line_sensitivity(cfg: CircuitConfig, t_c: float = 25.0, vdd_range=(0.4, 2.0),
                     step: float = 0.01, with_stage1: bool = True) -> float:
    s = sweep_supply(cfg, t_c, vdd_range, step, with_stage1)
    return ls_box(s.vref, s.grid)


# --------------------------------------------------------------------------
# K studies

def with_k(cfg: CircuitConfig, k: float) -> CircuitConfig:
    """Set the aspect-ratio product by scaling the width of M4 alone."""
    k0 = cfg.effective_stage2().k_ratio
    m4 = cfg.stage2.m4
    return cfg.with_device("m4", w=m4.w * k / k0)


def tc_vs_k(cfg: CircuitConfig, k_grid: Sequence[float], vdd: float = TC_VDD,
            t_range=(0.0, 80.0), step: float = 1.0) -> SweepResult:
    k_grid = np.asarray(k_grid, dtype=float)
    tcs, ops = [], []
    for k in k_grid:
        s = sweep_temperature(with_k(cfg, k), vdd, t_range, step)
        tcs.append(tc_box(s.vref, s.grid))
        ops.extend(s.points)
    res = SweepResult("k_ratio", k_grid, vref=np.array(tcs), v_o=np.full(len(k_grid), math.nan),
                      v_ptat=np.full(len(k_grid), math.nan), power=np.full(len(k_grid), math.nan),
                      config_digest=config_digest(cfg), points=ops)
    return res


def golden_section(f: Callable[[float], float], a: float, b: float, rtol: float = 1e-4):
    """Minimise a unimodal ``f`` on [a, b]; returns (x, f(x))."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > rtol * 0.5 * (abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def count_local_minima(values: Sequence[float], rel_noise: float = 1e-9) -> int:
    """Interior strict local minima, ignoring wiggles below ``rel_noise``."""
    v = np.asarray(values, dtype=float)
    scale = rel_noise * max(float(np.max(np.abs(v))), 1e-300)
    count = 0
    for i in range(1, len(v) - 1):
        if v[i] < v[i - 1] - scale and v[i] < v[i + 1] - scale:
            count += 1
    return count


@dataclass(frozen=True)
class OptimalK:
    k_num: float
    k_theory: float
    gap: float
    tc_min: float
    unimodal: bool
    scan: SweepResult


def find_optimal_k(cfg: CircuitConfig, vdd: float = TC_VDD, t_range=(0.0, 80.0), step: float = 1.0,
                   k_grid: Optional[Sequence[float]] = None, rtol: float = 1e-4) -> OptimalK:
    """Grid scan of TC(K) refined by golden-section search."""
    k_theory = analytic.optimal_k_eq8(cfg.effective_stage2())
    if k_grid is None:
        k_grid = k_theory * np.geomspace(0.5, 2.0, 41)
    scan = tc_vs_k(cfg, k_grid, vdd, t_range, step)
    tcs = scan.vref
    i = int(np.argmin(tcs))
    unimodal = count_local_minima(tcs) <= 1
    if not unimodal:
        warnings.warn("TC(K) has several local minima on the scan grid", NonUnimodalWarning,
                      stacklevel=2)
    lo = scan.grid[max(i - 1, 0)]
    hi = scan.grid[min(i + 1, len(scan.grid) - 1)]

    def tc_of(k):
        s = sweep_temperature(with_k(cfg, k), vdd, t_range, step)
        return tc_box(s.vref, s.grid)

    k_num, tc_min = golden_section(tc_of, lo, hi, rtol)
    return OptimalK(k_num, k_theory, abs(k_num - k_theory) / k_theory, tc_min, unimodal, scan)


# --------------------------------------------------------------------------
# supply studies

def tc_vs_vdd(cfg: CircuitConfig, vdd_grid: Sequence[float], with_stage1: bool = True,
              t_range=(0.0, 80.0), step: float = 1.0) -> np.ndarray:
    return np.array([temperature_coefficient(cfg, v, t_range, step, with_stage1)
                     for v in vdd_grid])


def uncompensated(cfg: CircuitConfig) -> CircuitConfig:
    """The same circuit without the M12 DIBL compensator (lambda_D12 = 0)."""
    return cfg.with_device("m12", lambda_d=0.0)


@dataclass(frozen=True)
class LsAblation:
    stage2_alone: float
    two_stage: float
    compensated: float


def ls_ablation(cfg: CircuitConfig, t_c: float = 25.0, vdd_range=(0.4, 2.0),
                step: float = 0.01) -> LsAblation:
    """LS (ppm/V) without stage 1, with stage 1 but no DIBL compensation, and complete."""
    return LsAblation(
        stage2_alone=line_sensitivity(cfg, t_c, vdd_range, step, with_stage1=False),
        two_stage=line_sensitivity(uncompensated(cfg), t_c, vdd_range, step),
        compensated=line_sensitivity(cfg, t_c, vdd_range, step),
    )


@dataclass(frozen=True)
class VoCurve:
    length: float
    lambda_d15: float
    lambda_d12: float
    vdd: np.ndarray
    v_o: np.ndarray
    extremum_vdd: Optional[float]


def interior_extremum(x, y, atol: float = 1e-9) -> Optional[float]:
    """Location of the interior extremum of y(x), or None if y is monotone.

    The turnaround must exceed ``atol`` on both sides, so numerical noise
    on a flat plateau does not count.
    """
    y = np.asarray(y, dtype=float)
    for i in (int(np.argmax(y)), int(np.argmin(y))):
        if 0 < i < len(y) - 1 and min(abs(y[i] - y[0]), abs(y[i] - y[-1])) > atol:
            return float(np.asarray(x)[i])
    return None


def lambda_from_length(length: float, lambda_ref: float = 0.03, l_ref: float = 0.3e-6,
                       exponent: float = 2.0) -> float:
    """Default DIBL-versus-length map: lambda = lambda_ref * (l_ref / L)**exponent."""
    return lambda_ref * (l_ref / length) ** exponent


def m15_length_study(cfg: CircuitConfig, lengths: Sequence[float], with_dibl_comp: bool = True,
                     lambda_of_length: Callable[[float], float] = lambda_from_length,
                     vdd_grid: Optional[Sequence[float]] = None, t_c: float = 25.0,
                     fit: Optional[analytic.LinFit] = None) -> list[VoCurve]:
    """V_O(V_DD) for several M15 lengths at fixed M15 aspect ratio.

    Each length sets lambda_D15 through ``lambda_of_length``; with
    compensation M12's DIBL factor follows the cancellation rule,
    otherwise it is zero.
    """
    fit = analytic.fit_ln1mx() if fit is None else fit
    vdd_grid = _grid(0.4, 2.0, 0.01) if vdd_grid is None else np.asarray(vdd_grid, dtype=float)
    m15 = cfg.stage1.m15
    n_r = cfg.stage1.m11.n / cfg.stage1.m12.n
    curves = []
    for length in lengths:
        lam15 = lambda_of_length(length)
        lam12 = analytic.dibl_compensation_eq18(lam15, n_r, fit.c1) if with_dibl_comp else 0.0
        c = (cfg.with_device("m15", l=length, w=m15.w * length / m15.l, lambda_d=lam15)
             .with_device("m12", lambda_d=lam12))
        vo = np.array([solve_full(c, v, t_c + KELVIN).v_o for v in vdd_grid])
        curves.append(VoCurve(length, lam15, lam12, vdd_grid, vo,
                              interior_extremum(vdd_grid, vo)))
    return curves


def stage1_tc_leakage(cfg: CircuitConfig, vdd: float = TC_VDD, t_range=(0.0, 80.0),
                      step: float = 1.0) -> dict:
    """First-stage TC leaking into V_REF: LS2 * TC(V_O) * mean(V_O).

    LS2 is the closed-form stage-2 sensitivity per volt. Returned next to
    TC(V_REF) so the two can be compared.
    """
    s = sweep_temperature(cfg, vdd, t_range, step)
    ls2 = analytic.ls2_eq20(cfg.effective_stage2(), float(np.mean(s.vref)))
    tc_vo = tc_box(s.v_o, s.grid)
    vo_mean = float(np.mean(s.v_o))
    leak = ls2 * tc_vo * vo_mean
    tc_ref = tc_box(s.vref, s.grid)
    return {"ls2_per_v": ls2, "tc_vo": tc_vo, "vo_mean": vo_mean, "leakage": leak,
            "tc_vref": tc_ref, "ratio": leak / tc_ref if tc_ref > 0 else math.inf}


def ptat_slopes(cfg: CircuitConfig, ratios: Sequence[float] = (0.4, 0.8, 1.6),
                vdd: float = TC_VDD, t_range=(0.0, 80.0), step: float = 5.0) -> np.ndarray:
    """dV_PTAT/dT (V/K) of the stage-2 PTAT generator for R = (W/L)2/(W/L)1.

    R is set through the width of M2; the slope is a least-squares line
    through the solved V_PTAT(T).
    """
    from vrefkit.circuit import solve_stage2
    m1, m2 = cfg.stage2.m1, cfg.stage2.m2
    temps = _grid(t_range[0], t_range[1], step) + KELVIN
    out = []
    for r in ratios:
        w2 = r * m1.aspect * m2.l / m2.mult
        s2 = replace(cfg.effective_stage2(), m2=m2.with_(w=w2))
        vp = [solve_stage2(s2, vdd, T, cfg.flags, cfg.solver).v_ptat for T in temps]
        out.append(np.polyfit(temps, vp, 1)[0])
    return np.array(out)


# --------------------------------------------------------------------------
# closed-form oracle suite

@dataclass(frozen=True)
class OracleCheck:
    name: str
    max_dev: float
    tolerance: Optional[float]
    unit: str

    def __post_init__(self):
        object.__setattr__(self, "max_dev", float(self.max_dev))

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_dev <= self.tolerance


def ideal(cfg: CircuitConfig) -> CircuitConfig:
    return cfg.with_flags(drain_factor=False, dibl=False, stage2_loading=False)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


def analytic_checks(cfg: CircuitConfig, vdd: float = TC_VDD,
                    temps_c: Sequence[float] = tuple(range(0, 81, 10))) -> list[OracleCheck]:
    """Ideal-model solves against the closed forms over temperature.

    Voltages are compared absolutely (V), currents relatively. The printed
    linearised V_O is reported without a tolerance.
    """
    c = ideal(cfg)
    s1, s2 = c.stage1, c.effective_stage2()
    dev = {k: 0.0 for k in ("eq5", "eq6", "eq11", "eq12", "eq13", "eq14", "eq16", "resid")}
    for t in temps_c:
        T = t + KELVIN
        op = solve_full(c, vdd, T)
        dev["eq5"] = max(dev["eq5"], abs(op.v_ptat - analytic.vptat_eq5(s2.m1, s2.m2, T)))
        dev["eq6"] = max(dev["eq6"], abs(op.v_ref - analytic.vref_eq6(s2, T)))
        dev["eq11"] = max(dev["eq11"], abs(op.v_x - analytic.vx_eq11(s1, op.v_o, T)))
        dev["eq12"] = max(dev["eq12"], _rel(op.i_d13, analytic.id13_eq12(s1, op.v_o, T)))
        dev["eq13"] = max(dev["eq13"], _rel(op.i_d15, analytic.id15_eq13(s1, T)))
        dev["eq14"] = max(dev["eq14"], abs(op.v_o - analytic.vo_eq14(s1, T)))
        dev["eq16"] = max(dev["eq16"], abs(op.v_o - analytic.vo_eq16(s1, T)))
        dev["resid"] = max(dev["resid"], op.residual)
    temps = [t + KELVIN for t in temps_c]
    v9 = [analytic.vref_eq9(s2, T) for T in temps]
    fit = analytic.fit_ln1mx()
    xs = np.linspace(*fit.x_range, 1000)
    ortho = abs(float(np.sum((np.log1p(-xs) - fit(xs)) * xs)))
    return [
        OracleCheck("vptat_eq5", dev["eq5"], 1e-6, "V"),
        OracleCheck("vref_eq6", dev["eq6"], 1e-6, "V"),
        OracleCheck("vx_eq11", dev["eq11"], 1e-6, "V"),
        OracleCheck("id13_eq12", dev["eq12"], 1e-6, "rel"),
        OracleCheck("id15_eq13", dev["eq13"], 1e-6, "rel"),
        OracleCheck("vo_eq14", dev["eq14"], 1e-6, "V"),
        OracleCheck("vref_eq9_spread", max(v9) - min(v9), 1e-12, "V"),
        OracleCheck("fit_orthogonality", ortho, 1e-9, "-"),
        OracleCheck("kcl_residual", dev["resid"], 1e-9, "rel"),
        OracleCheck("vo_eq16_printed", dev["eq16"], None, "V"),
    ]
