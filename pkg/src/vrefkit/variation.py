"""Process corners, Monte Carlo and the M3 trim search."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from vrefkit import analysis, analytic
from vrefkit.circuit import CircuitConfig, ConfigurationError, ConvergenceError, TrimNetwork
from vrefkit.device import ModelDomainError, OxideClass

RNG_ALGORITHM = "Philox4x32-10 keyed by numpy SeedSequence([seed, run_index])"


@dataclass(frozen=True)
class CornerSpec:
    name: str
    dvth_thin: float = 0.0
    dvth_thick: float = 0.0
    mu_scale_thin: float = 1.0
    mu_scale_thick: float = 1.0

    def __post_init__(self):
        if self.name == "TT" and (self.dvth_thin or self.dvth_thick
                                  or self.mu_scale_thin != 1.0 or self.mu_scale_thick != 1.0):
            raise ConfigurationError("TT corner must have zero shifts and unit scales")
        if not (self.mu_scale_thin > 0 and self.mu_scale_thick > 0):
            raise ConfigurationError(f"{self.name}: mobility scales must be positive")

    def shift(self, cls: OxideClass) -> float:
        return self.dvth_thin if cls is OxideClass.THIN else self.dvth_thick

    def scale(self, cls: OxideClass) -> float:
        return self.mu_scale_thin if cls is OxideClass.THIN else self.mu_scale_thick


def default_corners(dvth: float = 0.040, dmu: float = 0.10) -> dict[str, CornerSpec]:
    """Fast = lower threshold and higher mobility."""
    fast, slow = (-dvth, 1.0 + dmu), (dvth, 1.0 - dmu)
    return {
        "TT": CornerSpec("TT"),
        "FF": CornerSpec("FF", fast[0], fast[0], fast[1], fast[1]),
        "SS": CornerSpec("SS", slow[0], slow[0], slow[1], slow[1]),
        "FS": CornerSpec("FS", fast[0], slow[0], fast[1], slow[1]),
        "SF": CornerSpec("SF", slow[0], fast[0], slow[1], fast[1]),
    }


CORNERS = default_corners()


def perturb(cfg: CircuitConfig, dvth: dict, mu_scale: dict,
            per_device: Optional[dict] = None) -> CircuitConfig:
    """Shift thresholds / scale mobility by oxide class, plus per-device vth offsets."""
    per_device = per_device or {}
    classes = {}

    def fn(name, dev):
        cls = dev.oxide_class
        if cls not in classes:
            classes[cls] = replace(dev.dclass, mu_cox=dev.dclass.mu_cox * mu_scale.get(cls, 1.0))
        return dev.with_(dclass=classes[cls],
                         vth0=dev.vth0 + dvth.get(cls, 0.0) + per_device.get(name, 0.0))

    return cfg.map_devices(fn)


def apply_corner(cfg: CircuitConfig, corner: CornerSpec) -> CircuitConfig:
    if corner.name == "TT" and corner == CornerSpec("TT"):
        return cfg
    classes = (OxideClass.THIN, OxideClass.THICK)
    return perturb(cfg, {c: corner.shift(c) for c in classes},
                   {c: corner.scale(c) for c in classes})


# --------------------------------------------------------------------------
# trimming

TRIM_T_RANGE = (-10.0, 85.0)


def size_trim_bits(cfg: CircuitConfig, corners: Sequence[CornerSpec] = tuple(CORNERS.values()),
                   nominal_code: int = 3, grid: float = 0.0) -> TrimNetwork:
    """Binary bits {w, 2w, 4w} whose code range spans every corner's optimal K.

    The optimum of each corner comes from the closed-form K. The aspect
    product carries 1/(W/L)3, so the M3 width that restores the optimum
    at a corner is w3_nom * K_TT / K_corner. ``grid`` > 0 rounds w up.
    """
    s2 = cfg.effective_stage2()
    w_nom = s2.m3.w * s2.m3.mult
    k_tt = analytic.optimal_k_eq8(s2)
    need = [w_nom * k_tt / analytic.optimal_k_eq8(apply_corner(cfg, c).effective_stage2())
            for c in corners]
    lo, hi = min(need), max(need)
    w = max((w_nom - lo) / nominal_code if nominal_code else 0.0,
            (hi - w_nom) / (7 - nominal_code) if nominal_code < 7 else 0.0)
    if grid > 0:
        w = math.ceil(w / grid - 1e-9) * grid
    base = w_nom - w * nominal_code
    if base <= 0:
        raise ConfigurationError("trim range would need a non-positive base width")
    return TrimNetwork(base, (w, 2 * w, 4 * w), nominal_code)


@dataclass(frozen=True)
class TrimResult:
    corner: str
    best_code: int
    nominal_code: int
    tc_by_code: tuple[float, ...]


def trim_search(cfg: CircuitConfig, corner: CornerSpec = CornerSpec("TT"),
                vdd: float = analysis.TC_VDD, t_range=TRIM_T_RANGE, step: float = 1.0) -> TrimResult:
    """Exhaustive TC over all 8 codes; ties go to the code nearest nominal."""
    if cfg.trim is None:
        raise ConfigurationError("trim search needs a trim network")
    nominal = cfg.trim.code
    base = apply_corner(cfg, corner)
    tcs = tuple(analysis.temperature_coefficient(base.with_trim_code(c), vdd, t_range, step)
                for c in range(8))
    best = min(range(8), key=lambda c: (tcs[c], abs(c - nominal), c))
    return TrimResult(corner.name, best, nominal, tcs)


# --------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class McConfig:
    seed: int = 0
    runs: int = 1000
    sigma_vth_global: float = 3e-3
    a_vt: float = 3.5e-9  # V*m, i.e. 3.5 mV*um
    sigma_mu_rel: float = 0.02
    vdd: float = analysis.TC_VDD
    t_range: tuple[float, float] = (0.0, 80.0)
    t_step: float = 5.0
    vdd_range: tuple[float, float] = (0.4, 2.0)
    vdd_step: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if min(self.sigma_vth_global, self.a_vt, self.sigma_mu_rel) < 0:
            raise ConfigurationError("sigmas must be >= 0")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


def run_rng(seed: int, run: int) -> np.random.Generator:
    """Independent stream for one run; depends only on (seed, run)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, run])))


def draw_run(cfg: CircuitConfig, mc: McConfig, run: int) -> CircuitConfig:
    rng = run_rng(mc.seed, run)
    classes = (OxideClass.THIN, OxideClass.THICK)
    g = rng.standard_normal(2)
    mu = rng.standard_normal(2)
    local = rng.standard_normal(len(cfg.devices()))
    dvth = {c: mc.sigma_vth_global * g[i] for i, c in enumerate(classes)}
    scale = {c: 1.0 + mc.sigma_mu_rel * mu[i] for i, c in enumerate(classes)}
    eff = dict(cfg.devices())
    eff["m3"] = cfg.effective_stage2().m3
    per_device = {name: mc.a_vt / math.sqrt(dev.area) * z
                  for (name, dev), z in zip(eff.items(), local)}
    return perturb(cfg, dvth, scale, per_device)


METRICS = ("tc", "ls", "power", "vref")


def _metrics(cfg: CircuitConfig, mc: McConfig) -> tuple[float, ...]:
    ts = analysis.sweep_temperature(cfg, mc.vdd, mc.t_range, mc.t_step)
    vs = analysis.sweep_supply(cfg, 25.0, mc.vdd_range, mc.vdd_step)
    i25 = int(np.argmin(np.abs(ts.grid_c - 25.0)))
    op = ts.points[i25] if abs(ts.grid_c[i25] - 25.0) < 1e-9 else None
    if op is None:
        from vrefkit.circuit import solve_full
        op = solve_full(cfg, mc.vdd, 298.15)
    return (analysis.tc_box(ts.vref, ts.grid), analysis.ls_box(vs.vref, vs.grid),
            op.power, op.v_ref)


def _one(args):
    cfg, mc, run = args
    try:
        return run, _metrics(draw_run(cfg, mc, run), mc), None
    except (ConvergenceError, ModelDomainError, ArithmeticError, ValueError) as exc:
        return run, None, f"run {run}: {exc}"


@dataclass
class RunningStats:
    """Welford accumulator with Chan's pairwise merge."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        n = self.n + other.n
        if n == 0:
            return RunningStats()
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return RunningStats(n, mean, m2)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0


@dataclass
class McReport:
    seed: int
    runs: int
    rng: str
    stats: dict
    samples: dict = field(repr=False)
    failed: list = field(default_factory=list)
    ok_runs: list = field(default_factory=list)
    bins: int = 20

    def mean(self, metric: str) -> float:
        return self.stats[metric].mean

    def std(self, metric: str) -> float:
        return self.stats[metric].std

    def histogram(self, metric: str):
        data = np.asarray(self.samples[metric])
        if data.size == 0:
            return np.zeros(0), np.zeros(0)
        return np.histogram(data, bins=self.bins)


def monte_carlo(cfg: CircuitConfig, mc: McConfig = McConfig(),
                runs: Optional[Sequence[int]] = None) -> McReport:
    """Monte Carlo over global, mobility and Pelgrom mismatch variation.

    ``runs`` selects run indices (default ``range(mc.runs)``), so batches
    drawn separately can be merged afterwards.
    """
    idx = list(range(mc.runs)) if runs is None else list(runs)
    jobs = [(cfg, mc, r) for r in idx]
    if mc.workers > 1:
        with ProcessPoolExecutor(mc.workers) as pool:
            results = list(pool.map(_one, jobs, chunksize=max(1, len(jobs) // (4 * mc.workers))))
    else:
        results = [_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    stats = {m: RunningStats() for m in METRICS}
    samples = {m: [] for m in METRICS}
    failed, ok = [], []
    for run, vals, err in results:
        if vals is None:
            failed.append(err)
            continue
        ok.append(run)
        for m, v in zip(METRICS, vals):
            stats[m].add(v)
            samples[m].append(v)
    return McReport(mc.seed, len(idx), RNG_ALGORITHM, stats, samples, failed, ok)
