"""Two-stage subthreshold reference: topology, configuration and DC solve.

Node and wiring summary (all NMOS, bulk at ground)::

    stage 2 (TC correction), supplied from ``supply`` (V_O, or V_DD alone)
      M1  thin   diode at V_PTAT                  vgs = vds = V_PTAT
      M2  thin   drain supply, gate = source      vgs = 0, vds = supply - V_PTAT
      M3  thick  diode at V_REF                   vgs = vds = V_REF
      M4  thin   drain supply, gate V_PTAT        vgs = V_PTAT - V_REF, vds = supply - V_REF

    stage 1 (LS correction), supplied from V_DD
      M11 thick  diode at V_X                     vgs = vds = V_X
      M12 thin   drain V_DD, gate V_O             vgs = V_O - V_X, vds = V_DD - V_X
      M13 thick  drain V_O, gate V_X              vgs = V_X, vds = V_O
      M14 thick  diode at V_O                     vgs = vds = V_O
      M15 thin   drain V_DD, gate = source        vgs = 0, vds = V_DD - V_O

Every KCL residual is written in the log domain, ``ln I_in - ln I_out``,
which is nearly linear in the node voltage and directly measures the
relative current mismatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from vrefkit.device import (
    OxideClass,
    TransistorParams,
    log_current,
    thermal_voltage,
    threshold_voltage,
)

THIN = OxideClass.THIN
THICK = OxideClass.THICK

STAGE2_NAMES = ("m1", "m2", "m3", "m4")
STAGE1_NAMES = ("m11", "m12", "m13", "m14", "m15")
EXPECTED_CLASS = {
    "m1": THIN, "m2": THIN, "m3": THICK, "m4": THIN,
    "m11": THICK, "m12": THIN, "m13": THICK, "m14": THICK, "m15": THIN,
}


class ConfigurationError(ValueError):
    """Structural problem with a circuit configuration."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ConvergenceError(RuntimeError):
    """A DC solve failed; carries the last iterate for diagnosis."""

    def __init__(self, message, stage=None, last=None, residual=None):
        self.stage = stage
        self.last = last
        self.residual = residual
        prefix = f"[{stage}] " if stage else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ModelFlags:
    drain_factor: bool = True
    dibl: bool = True
    stage2_loading: bool = True

    @classmethod
    def ideal(cls, stage2_loading: bool = False) -> "ModelFlags":
        """The closed-form model: no drain factor, no DIBL."""
        return cls(drain_factor=False, dibl=False, stage2_loading=stage2_loading)


@dataclass(frozen=True)
class SolverSettings:
    tol_v: float = 1e-7
    tol_rel_i: float = 1e-9
    max_iter: int = 100
    max_halvings: int = 60

    def __post_init__(self):
        if not self.tol_v > 0:
            raise ConfigurationError("solver.tol_v must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("solver.max_iter must be >= 1")


@dataclass(frozen=True)
class Stage2Config:
    m1: TransistorParams
    m2: TransistorParams
    m3: TransistorParams
    m4: TransistorParams

    @property
    def k_ratio(self) -> float:
        """Aspect-ratio product (W/L)4 (W/L)2 / ((W/L)3 (W/L)1)."""
        return self.m4.aspect * self.m2.aspect / (self.m3.aspect * self.m1.aspect)


@dataclass(frozen=True)
class Stage1Config:
    m11: TransistorParams
    m12: TransistorParams
    m13: TransistorParams
    m14: TransistorParams
    m15: TransistorParams


@dataclass(frozen=True)
class TrimNetwork:
    """Binary-weighted width trim on M3."""

    w3_base: float
    w3_bits: tuple[float, float, float]
    code: int = 0

    def w3_eff(self, code: Optional[int] = None) -> float:
        code = self.code if code is None else code
        return self.w3_base + sum(w for i, w in enumerate(self.w3_bits) if code >> i & 1)

    def with_code(self, code: int) -> "TrimNetwork":
        return replace(self, code=code)


@dataclass(frozen=True)
class CircuitConfig:
    stage1: Stage1Config
    stage2: Stage2Config
    trim: Optional[TrimNetwork] = None
    flags: ModelFlags = field(default_factory=ModelFlags)
    solver: SolverSettings = field(default_factory=SolverSettings)
    vdd_min: float = 0.4

    def device(self, name: str) -> TransistorParams:
        return getattr(self.stage1 if name in STAGE1_NAMES else self.stage2, name)

    def devices(self) -> dict[str, TransistorParams]:
        return {name: self.device(name) for name in STAGE2_NAMES + STAGE1_NAMES}

    def with_device(self, name: str, **changes) -> "CircuitConfig":
        dev = self.device(name).with_(**changes)
        if name in STAGE1_NAMES:
            return replace(self, stage1=replace(self.stage1, **{name: dev}))
        return replace(self, stage2=replace(self.stage2, **{name: dev}))

    def map_devices(self, fn: Callable[[str, TransistorParams], TransistorParams]) -> "CircuitConfig":
        s1 = Stage1Config(**{n: fn(n, getattr(self.stage1, n)) for n in STAGE1_NAMES})
        s2 = Stage2Config(**{n: fn(n, getattr(self.stage2, n)) for n in STAGE2_NAMES})
        return replace(self, stage1=s1, stage2=s2)

    def with_flags(self, **changes) -> "CircuitConfig":
        return replace(self, flags=replace(self.flags, **changes))

    def with_trim_code(self, code: int) -> "CircuitConfig":
        if self.trim is None:
            raise ConfigurationError("configuration has no trim network")
        return replace(self, trim=self.trim.with_code(code))

    def effective_stage2(self) -> Stage2Config:
        """Stage 2 with M3's width set by the trim network, if any."""
        if self.trim is None:
            return self.stage2
        m3 = self.stage2.m3.with_(w=self.trim.w3_eff(), mult=1)
        return replace(self.stage2, m3=m3)


@dataclass(frozen=True)
class Diagnostics:
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors


def wire_check(cfg: CircuitConfig, raise_on_error: bool = True) -> Diagnostics:
    """Validate oxide classes, the trim network and supply headroom."""
    errors: list[str] = []
    warnings: list[str] = []
    for name, dev in cfg.devices().items():
        if dev.oxide_class != EXPECTED_CLASS[name]:
            errors.append(f"{name} must be {EXPECTED_CLASS[name].value}-oxide, "
                          f"got {dev.oxide_class.value}")
    if cfg.trim is not None:
        trim = cfg.trim
        if not 0 <= trim.code <= 7:
            errors.append(f"trim code {trim.code} outside [0, 7]")
        if len(trim.w3_bits) != 3:
            errors.append("trim network needs exactly 3 bit widths")
        elif any(w < 0 for w in trim.w3_bits):
            errors.append("trim bit widths must be >= 0")
        elif all(w == 0 for w in trim.w3_bits):
            if trim.code > 0:
                warnings.append("trim ineffective: all bit widths are zero")
        else:
            widths = [trim.w3_eff(c) for c in range(8)]
            if any(b <= a for a, b in zip(widths, widths[1:])):
                errors.append("trim effective width is not strictly increasing in code")
        if trim.w3_base <= 0:
            errors.append("trim base width must be positive")
    if not errors:
        s2 = cfg.effective_stage2()
        vt = thermal_voltage(298.15)
        v_ptat = (threshold_voltage(s2.m1, 298.15) - threshold_voltage(s2.m2, 298.15)
                  + s2.m1.n * vt * math.log(s2.m2.aspect / s2.m1.aspect))
        need = 4 * vt + v_ptat
        if need >= cfg.vdd_min:
            warnings.append(f"stage-2 minimum supply 4*V_T + V_PTAT = {need:.4f} V is not "
                            f"below the configured minimum supply {cfg.vdd_min:.4f} V")
    diag = Diagnostics(tuple(errors), tuple(warnings))
    if errors and raise_on_error:
        raise ConfigurationError(errors)
    return diag


# --------------------------------------------------------------------------
# scalar root finding

@dataclass
class ScalarRoot:
    x: float
    f: float
    iterations: int
    at_boundary: bool = False


def bracketed_root(g: Callable[[float], tuple[float, float]], lo: float, hi: float,
                   x0: Optional[float] = None, ftol: float = 1e-12, max_iter: int = 200,
                   method: str = "newton", what: str = "root") -> ScalarRoot:
    """Root of an increasing function on ``[lo, hi]``.

    ``g`` returns ``(value, derivative)``. Newton steps that leave the
    current bracket are replaced by bisection. ``method="bisection"``
    disables Newton entirely.
    """
    g_lo = g(lo)[0]
    g_hi = g(hi)[0]
    if g_lo == 0.0:
        return ScalarRoot(lo, 0.0, 0, at_boundary=True)
    if g_hi == 0.0:
        return ScalarRoot(hi, 0.0, 0, at_boundary=True)
    if not (g_lo < 0.0 < g_hi):
        raise ConvergenceError(
            f"no sign change for {what} in [{lo:.6g}, {hi:.6g}] "
            f"(g(lo)={g_lo:.4g}, g(hi)={g_hi:.4g})", last=(lo, hi))
    x = 0.5 * (lo + hi) if x0 is None or not lo < x0 < hi else x0
    f = math.nan
    for it in range(1, max_iter + 1):
        f, df = g(x)
        if abs(f) <= ftol:
            return ScalarRoot(x, f, it)
        if f < 0.0:
            lo = x
        else:
            hi = x
        x_new = x - f / df if method == "newton" and df > 0 and math.isfinite(df) else math.nan
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x or hi - lo <= 4 * np.finfo(float).eps * max(abs(x), 1e-3):
            return ScalarRoot(x_new, g(x_new)[0], it)
        x = x_new
    raise ConvergenceError(f"{what}: no convergence after {max_iter} iterations",
                           last=x, residual=f)


def _lnI(dev, vgs, vds, T, flags):
    return log_current(dev, vgs, vds, T, flags.drain_factor, flags.dibl)


def _rel_mismatch(a: float, b: float) -> float:
    m = max(abs(a), abs(b))
    return 0.0 if m == 0.0 else abs(a - b) / m


# --------------------------------------------------------------------------
# stage 2

@dataclass(frozen=True)
class Stage2Solution:
    supply: float
    temperature: float
    v_ptat: float
    v_ref: float
    i_d1: float
    i_d2: float
    i_d3: float
    i_d4: float
    dvptat_dsupply: float
    dvref_dsupply: float
    dcurrent_dsupply: float
    residual: float
    degenerate: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def supply_current(self) -> float:
        return self.i_d2 + self.i_d4


def _ptat_estimate(stage2: Stage2Config, T: float) -> float:
    vt = thermal_voltage(T)
    return (threshold_voltage(stage2.m1, T) - threshold_voltage(stage2.m2, T)
            + stage2.m1.n * vt * math.log(stage2.m2.aspect / stage2.m1.aspect))


def solve_stage2(stage2: Stage2Config, supply: float, temperature: float,
                 flags: ModelFlags = ModelFlags(), solver: SolverSettings = SolverSettings(),
                 method: str = "newton") -> Stage2Solution:
    """Solve V_PTAT then V_REF for the TC-correction stage at a given supply."""
    T = temperature
    m1, m2, m3, m4 = stage2.m1, stage2.m2, stage2.m3, stage2.m4
    warnings = []
    vt = thermal_voltage(T)
    v_ptat_est = _ptat_estimate(stage2, T)
    if supply < 4 * vt + v_ptat_est:
        warnings.append(f"headroom: supply {supply:.4f} V below 4*V_T + V_PTAT "
                        f"= {4 * vt + v_ptat_est:.4f} V")
    ftol = 1e-3 * solver.tol_rel_i

    def g_ptat(v):
        l1, g1, d1 = _lnI(m1, v, v, T, flags)
        l2, _, d2 = _lnI(m2, 0.0, supply - v, T, flags)
        return l1 - l2, g1 + d1 + d2

    degenerate = False
    try:
        r1 = bracketed_root(g_ptat, 0.0, supply, x0=v_ptat_est, ftol=ftol,
                            max_iter=solver.max_iter * 2, method=method, what="V_PTAT")
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), stage="stage2", last=exc.last) from None
    v_ptat = r1.x
    if r1.at_boundary:
        degenerate = True
        warnings.append("degenerate: V_PTAT root on the bracket boundary")

    def g_ref(v):
        l3, g3, d3 = _lnI(m3, v, v, T, flags)
        l4, g4, d4 = _lnI(m4, v_ptat - v, supply - v, T, flags)
        return l3 - l4, g3 + d3 + g4 + d4

    n_l, n_h = m4.n, m3.n
    v_ref_est = (n_l * threshold_voltage(m3, T) + n_h * (v_ptat - threshold_voltage(m4, T))
                 + n_h * n_l * vt * math.log(m4.dclass.mu_cox * m4.aspect
                                             / (m3.dclass.mu_cox * m3.aspect))) / (n_h + n_l)
    try:
        r2 = bracketed_root(g_ref, 0.0, supply, x0=v_ref_est, ftol=ftol,
                            max_iter=solver.max_iter * 2, method=method, what="V_REF")
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), stage="stage2", last=exc.last) from None
    v_ref = r2.x
    if r2.at_boundary:
        degenerate = True
        warnings.append("degenerate: V_REF root on the bracket boundary")

    i1 = math.exp(_lnI(m1, v_ptat, v_ptat, T, flags)[0])
    i2 = math.exp(_lnI(m2, 0.0, supply - v_ptat, T, flags)[0])
    i3 = math.exp(_lnI(m3, v_ref, v_ref, T, flags)[0])
    i4 = math.exp(_lnI(m4, v_ptat - v_ref, supply - v_ref, T, flags)[0])
    if i1 == 0.0 or i3 == 0.0:
        degenerate = True
        warnings.append("degenerate: zero branch current")

    # sensitivities to the supply by implicit differentiation (log domain)
    _, g1, d1 = _lnI(m1, v_ptat, v_ptat, T, flags)
    _, _, d2 = _lnI(m2, 0.0, supply - v_ptat, T, flags)
    _, g3, d3 = _lnI(m3, v_ref, v_ref, T, flags)
    _, g4, d4 = _lnI(m4, v_ptat - v_ref, supply - v_ref, T, flags)
    dvp = d2 / (g1 + d1 + d2) if math.isfinite(d2) else 0.0
    dvr = (g4 * dvp + d4) / (g3 + d3 + g4 + d4) if math.isfinite(d4) else 0.0
    di2 = i2 * d2 * (1.0 - dvp) if math.isfinite(d2) else 0.0
    di4 = i3 * (g3 + d3) * dvr
    residual = max(_rel_mismatch(i1, i2), _rel_mismatch(i3, i4))
    return Stage2Solution(supply, T, v_ptat, v_ref, i1, i2, i3, i4, dvp, dvr, di2 + di4,
                          residual, degenerate, tuple(warnings))


class Stage2Load:
    """Supply current drawn by stage 2 as a function of its supply voltage."""

    def __init__(self, stage2: Stage2Config, temperature: float, flags: ModelFlags,
                 solver: SolverSettings):
        self.stage2 = stage2
        self.temperature = temperature
        self.flags = flags
        self.solver = solver

    def solve(self, v: float) -> Optional[Stage2Solution]:
        if v <= 0.0:
            return None
        return solve_stage2(self.stage2, v, self.temperature, self.flags, self.solver)

    def current_and_slope(self, v: float) -> tuple[float, float]:
        sol = self.solve(v)
        if sol is None:
            return 0.0, 0.0
        return sol.supply_current, sol.dcurrent_dsupply

    def __call__(self, v: float) -> float:
        return self.current_and_slope(v)[0]


# --------------------------------------------------------------------------
# stage 1

@dataclass(frozen=True)
class Stage1Solution:
    vdd: float
    temperature: float
    v_x: float
    v_o: float
    i_d11: float
    i_d12: float
    i_d13: float
    i_d14: float
    i_d15: float
    i_load: float
    residual: float
    iterations: int
    method: str

    @property
    def x_ratio(self) -> float:
        """I_D13 / I_D15, the argument of the ln(1 - X) term."""
        return self.i_d13 / self.i_d15


def stage1_initial_guess(stage1: Stage1Config, vdd: float, T: float) -> tuple[float, float]:
    """Closed-form seed: V_O from the linearised output equation, V_X from V_O."""
    from vrefkit import analytic

    try:
        v_o = analytic.vo_linearised(stage1, T)
    except (ArithmeticError, ValueError):
        v_o = math.nan
    if not 0.0 < v_o < vdd:
        v_o = 0.75 * vdd
    v_x = analytic.vx_eq11(stage1, v_o, T)
    if not 0.0 < v_x < vdd:
        v_x = 0.5 * v_o
    return v_x, v_o


def _stage1_eval(stage1: Stage1Config, vdd, T, flags, load, vx, vo):
    """Log-domain residuals and Jacobian for the two stage-1 nodes."""
    l11, g11, d11 = _lnI(stage1.m11, vx, vx, T, flags)
    l12, g12, d12 = _lnI(stage1.m12, vo - vx, vdd - vx, T, flags)
    l13, g13, d13 = _lnI(stage1.m13, vx, vo, T, flags)
    l14, g14, d14 = _lnI(stage1.m14, vo, vo, T, flags)
    l15, _, d15 = _lnI(stage1.m15, 0.0, vdd - vo, T, flags)
    i13, i14 = math.exp(l13), math.exp(l14)
    il, dil = load(vo) if load is not None else (0.0, 0.0)
    s = i13 + i14 + il
    f1 = l12 - l11
    f2 = l15 - math.log(s) if s > 0 else math.inf
    jac = np.array([
        [-g12 - d12 - g11 - d11, g12],
        [-i13 * g13 / s, -d15 - (i13 * d13 + i14 * (g14 + d14) + dil) / s],
    ]) if s > 0 else None
    return np.array([f1, f2]), jac


def _load_fn(stage2_load):
    if stage2_load is None:
        return None
    if hasattr(stage2_load, "current_and_slope"):
        return stage2_load.current_and_slope

    def fd(v, h=1e-7):
        return stage2_load(v), (stage2_load(v + h) - stage2_load(v - h)) / (2 * h)
    return fd


def _stage1_newton(stage1, vdd, T, flags, solver, load, guess):
    vx, vo = guess
    ftol = 1e-3 * solver.tol_rel_i
    f, jac = _stage1_eval(stage1, vdd, T, flags, load, vx, vo)
    norm = float(np.max(np.abs(f)))
    for it in range(1, solver.max_iter + 1):
        if norm <= ftol:
            return vx, vo, it - 1
        if jac is None or not np.all(np.isfinite(jac)):
            break
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        for _ in range(solver.max_halvings):
            vx_t, vo_t = vx + lam * step[0], vo + lam * step[1]
            if 0.0 < vx_t < vdd and 0.0 < vo_t < vdd:
                f_t, jac_t = _stage1_eval(stage1, vdd, T, flags, load, vx_t, vo_t)
                norm_t = float(np.max(np.abs(f_t)))
                if np.isfinite(norm_t) and norm_t < norm:
                    break
            lam *= 0.5
        else:
            break
        vx, vo, f, jac, norm = vx_t, vo_t, f_t, jac_t, norm_t
    if norm <= ftol:
        return vx, vo, solver.max_iter
    raise ConvergenceError("damped Newton stalled", stage="stage1", last=(vx, vo), residual=norm)


def _stage1_nested(stage1, vdd, T, flags, solver, load, method, guess=None):
    ftol = 1e-3 * solver.tol_rel_i
    m11, m12, m13, m14, m15 = (stage1.m11, stage1.m12, stage1.m13, stage1.m14, stage1.m15)
    count = [0]

    def vx_of(vo):
        def g(vx):
            l11, g11, d11 = _lnI(m11, vx, vx, T, flags)
            l12, g12, d12 = _lnI(m12, vo - vx, vdd - vx, T, flags)
            return l11 - l12, g11 + d11 + g12 + d12
        r = bracketed_root(g, 0.0, vdd, ftol=ftol * 1e-2, method=method, what="V_X")
        return r.x

    def h(vo):
        count[0] += 1
        vx = vx_of(vo)
        l12, g12, d12 = _lnI(m12, vo - vx, vdd - vx, T, flags)
        _, g11, d11 = _lnI(m11, vx, vx, T, flags)
        dvx = g12 / (g11 + d11 + g12 + d12)
        l13, g13, d13 = _lnI(m13, vx, vo, T, flags)
        l14, g14, d14 = _lnI(m14, vo, vo, T, flags)
        l15, _, d15 = _lnI(m15, 0.0, vdd - vo, T, flags)
        i13, i14 = math.exp(l13), math.exp(l14)
        il, dil = load(vo) if load is not None else (0.0, 0.0)
        s = i13 + i14 + il
        if s <= 0.0:
            return -math.inf, math.inf
        ds = i13 * (g13 * dvx + d13) + i14 * (g14 + d14) + dil
        # increasing form: sink minus source
        return math.log(s) - l15, ds / s + d15

    r = bracketed_root(h, 0.0, vdd, x0=None if guess is None else guess[1], ftol=ftol,
                       max_iter=solver.max_iter * 4, method=method, what="V_O")
    return vx_of(r.x), r.x, count[0]


def solve_stage1(stage1: Stage1Config, vdd: float, temperature: float,
                 flags: ModelFlags = ModelFlags(), stage2_load=None,
                 solver: SolverSettings = SolverSettings(), method: str = "newton",
                 guess: Optional[tuple[float, float]] = None) -> Stage1Solution:
    """Solve V_X and V_O of the LS-correction stage.

    ``stage2_load`` is ``None`` or a callable giving the current drawn from
    V_O. ``method`` is ``"newton"`` (2-D damped Newton, nested bracketed
    fallback) or ``"bisection"`` (nested pure bisection only).
    """
    T = temperature
    load = _load_fn(stage2_load)
    if guess is None:
        guess = stage1_initial_guess(stage1, vdd, T)
    used = method
    if method == "newton":
        try:
            vx, vo, iters = _stage1_newton(stage1, vdd, T, flags, solver, load, guess)
        except ConvergenceError:
            vx, vo, iters = _stage1_nested(stage1, vdd, T, flags, solver, load, "newton", guess)
            used = "nested"
    else:
        vx, vo, iters = _stage1_nested(stage1, vdd, T, flags, solver, load, method)

    i11 = math.exp(_lnI(stage1.m11, vx, vx, T, flags)[0])
    i12 = math.exp(_lnI(stage1.m12, vo - vx, vdd - vx, T, flags)[0])
    i13 = math.exp(_lnI(stage1.m13, vx, vo, T, flags)[0])
    i14 = math.exp(_lnI(stage1.m14, vo, vo, T, flags)[0])
    i15 = math.exp(_lnI(stage1.m15, 0.0, vdd - vo, T, flags)[0])
    il = load(vo)[0] if load is not None else 0.0
    residual = max(_rel_mismatch(i11, i12), _rel_mismatch(i15, i13 + i14 + il))
    return Stage1Solution(vdd, T, vx, vo, i11, i12, i13, i14, i15, il, residual, iters, used)


# --------------------------------------------------------------------------
# full circuit

@dataclass(frozen=True)
class OperatingPoint:
    vdd: float
    temperature: float
    v_x: float
    v_o: float
    v_ptat: float
    v_ref: float
    i_d11: float
    i_d12: float
    i_d13: float
    i_d14: float
    i_d15: float
    i_d1: float
    i_d2: float
    i_d3: float
    i_d4: float
    supply_current: float
    residual: float
    with_stage1: bool = True
    degenerate: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def power(self) -> float:
        return self.vdd * self.supply_current

    @property
    def x_ratio(self) -> float:
        return self.i_d13 / self.i_d15 if self.with_stage1 else math.nan

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _check_residual(residual: float, solver: SolverSettings, vdd: float, T: float) -> None:
    if not residual <= solver.tol_rel_i:
        raise ConvergenceError(f"relative KCL residual {residual:.3g} exceeds "
                               f"{solver.tol_rel_i:.3g} at vdd={vdd:.4f} V, T={T:.2f} K",
                               residual=residual)


def solve_full(cfg: CircuitConfig, vdd: float, temperature: float,
               method: str = "newton") -> OperatingPoint:
    """Operating point of the complete two-stage reference.

    Stage 1 sees the stage-2 supply current as a load on V_O when
    ``cfg.flags.stage2_loading`` is set; stage 2 is then solved with
    supply V_O. ``supply_current`` is the V_DD rail current I_D12 + I_D15.
    """
    stage2 = cfg.effective_stage2()
    warnings = []
    if vdd < cfg.vdd_min:
        warnings.append(f"vdd {vdd:.4f} V below configured minimum {cfg.vdd_min:.4f} V")
    load = (Stage2Load(stage2, temperature, cfg.flags, cfg.solver)
            if cfg.flags.stage2_loading else None)
    try:
        s1 = solve_stage1(cfg.stage1, vdd, temperature, cfg.flags, load, cfg.solver, method)
    except ConvergenceError as exc:
        raise ConvergenceError(f"{exc} at vdd={vdd:.4f} V, T={temperature:.2f} K",
                               stage=exc.stage or "stage1", last=exc.last,
                               residual=exc.residual) from None
    s2 = solve_stage2(stage2, s1.v_o, temperature, cfg.flags, cfg.solver, method)
    warnings.extend(s2.warnings)
    residual = max(s2.residual, _rel_mismatch(s1.i_d11, s1.i_d12),
                   _rel_mismatch(s1.i_d15, s1.i_d13 + s1.i_d14
                                 + (s2.supply_current if load is not None else 0.0)))
    _check_residual(residual, cfg.solver, vdd, temperature)
    return OperatingPoint(
        vdd=vdd, temperature=temperature, v_x=s1.v_x, v_o=s1.v_o,
        v_ptat=s2.v_ptat, v_ref=s2.v_ref,
        i_d11=s1.i_d11, i_d12=s1.i_d12, i_d13=s1.i_d13, i_d14=s1.i_d14, i_d15=s1.i_d15,
        i_d1=s2.i_d1, i_d2=s2.i_d2, i_d3=s2.i_d3, i_d4=s2.i_d4,
        supply_current=s1.i_d12 + s1.i_d15, residual=residual,
        with_stage1=True, degenerate=s2.degenerate, warnings=tuple(warnings))


def solve_stage2_only(cfg: CircuitConfig, vdd: float, temperature: float,
                      method: str = "newton") -> OperatingPoint:
    """Stage 2 supplied straight from V_DD (no LS-correction stage).

    Stage-1 fields are NaN/zero; ``supply_current`` is I_D2 + I_D4.
    """
    s2 = solve_stage2(cfg.effective_stage2(), vdd, temperature, cfg.flags, cfg.solver, method)
    _check_residual(s2.residual, cfg.solver, vdd, temperature)
    nan = math.nan
    return OperatingPoint(
        vdd=vdd, temperature=temperature, v_x=nan, v_o=vdd, v_ptat=s2.v_ptat, v_ref=s2.v_ref,
        i_d11=0.0, i_d12=0.0, i_d13=0.0, i_d14=0.0, i_d15=0.0,
        i_d1=s2.i_d1, i_d2=s2.i_d2, i_d3=s2.i_d3, i_d4=s2.i_d4,
        supply_current=s2.supply_current, residual=s2.residual, with_stage1=False,
        degenerate=s2.degenerate, warnings=s2.warnings)
