"""Command-line front end: one study per subcommand, CSV out."""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
import warnings as pywarnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from vrefkit import analysis, analytic, smallsignal, variation
from vrefkit.circuit import ConfigurationError, ConvergenceError, solve_full, solve_stage2_only
from vrefkit.config import LoadedConfig, load_config
from vrefkit.device import ModelDomainError

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 3
EXIT_CONVERGENCE = 4
EXIT_NUMERICAL = 5
EXIT_IO = 6

KELVIN = analysis.KELVIN


@dataclass
class RunReport:
    command: str
    config_digest: str
    metrics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)
    duration_s: float = 0.0

    def summary(self) -> str:
        lines = [f"command: {self.command}", f"config digest: {self.config_digest}"]
        lines += [f"  {k} = {_fmt(v)}" for k, v in self.metrics.items()]
        lines += [f"warning: {w}" for w in self.warnings]
        lines += [f"wrote {f}" for f in self.files]
        lines.append(f"duration: {self.duration_s:.3f} s")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Context:
    """Per-invocation state: loaded config, output directory, report."""

    def __init__(self, args: argparse.Namespace, loaded: LoadedConfig):
        self.args = args
        self.loaded = loaded
        self.settings = loaded.settings
        cfg = loaded.circuit
        if args.ideal_model:
            cfg = analysis.ideal(cfg)
        if args.trim_code is not None:
            cfg = cfg.with_trim_code(args.trim_code)
        if args.corner:
            if args.corner not in self.settings.corners:
                raise ConfigurationError(f"unknown corner {args.corner!r}; "
                                         f"known: {', '.join(self.settings.corners)}")
            cfg = variation.apply_corner(cfg, self.settings.corners[args.corner])
        self.cfg = cfg
        self.with_stage1 = not args.no_stage1
        self.out = Path(args.out_dir)
        self.report = RunReport(args.command, self.settings.digest)

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.report.files.append(str(path))
        return path

    def metrics(self, name: str, values: dict) -> None:
        """Record summary metrics and write them to ``<name>_summary.csv``."""
        self.report.metrics.update(values)
        self.write_csv(f"{name}_summary.csv", ["metric", "value"], values.items())

    def solve(self):
        return solve_full if self.with_stage1 else solve_stage2_only


def _sweep_rows(s: analysis.SweepResult, temperature: bool):
    for i, x in enumerate(s.grid):
        lead = (x - KELVIN, x) if temperature else (x,)
        p = s.points[i]
        yield (*lead, s.vref[i], s.v_o[i], s.v_ptat[i], s.power[i], p.residual)


SWEEP_COLS = ["vref_v", "vo_v", "vptat_v", "power_w", "residual"]


def cmd_op(ctx: Context) -> None:
    a = ctx.args
    vdd = a.vdd if a.vdd is not None else ctx.settings.sweeps.tc_vdd
    op = ctx.solve()(ctx.cfg, vdd, a.temp + KELVIN)
    d = op.as_dict()
    ctx.report.warnings.extend(d.pop("warnings"))
    d["power"] = op.power
    ctx.write_csv("op.csv", list(d), [d.values()])
    ctx.report.metrics.update({"vref": op.v_ref, "vo": op.v_o, "power": op.power,
                               "residual": op.residual})


def cmd_sweep_temp(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    vdd = ctx.args.vdd if ctx.args.vdd is not None else sw.tc_vdd
    s = analysis.sweep_temperature(ctx.cfg, vdd, sw.t_range, sw.t_step, ctx.with_stage1)
    ctx.report.warnings.extend(s.warnings)
    ctx.write_csv("sweep_temp.csv", ["temp_c", "temp_k"] + SWEEP_COLS, _sweep_rows(s, True))
    m = analysis.metrics(temp_sweep=s)
    ctx.metrics("sweep_temp", {"tc_ppm_per_c": m.tc, "vref_mean_v": m.vref_mean,
                               "power_min_w": m.p_min, "power_max_w": m.p_max})


def cmd_sweep_vdd(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    t = ctx.args.temp
    s = analysis.sweep_supply(ctx.cfg, t, sw.vdd_range, sw.vdd_step, ctx.with_stage1)
    ctx.report.warnings.extend(s.warnings)
    ctx.write_csv("sweep_vdd.csv", ["vdd_v"] + SWEEP_COLS, _sweep_rows(s, False))
    m = analysis.metrics(supply_sweep=s)
    ctx.metrics("sweep_vdd", {"ls_ppm_per_v": m.ls, "vref_mean_v": m.vref_mean,
                              "power_min_w": m.p_min, "power_max_w": m.p_max})


def cmd_ls_ablation(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    ab = analysis.ls_ablation(ctx.cfg, ctx.args.temp, sw.vdd_range, sw.vdd_step)
    ctx.metrics("ls_ablation", {
        "ls_stage2_alone_ppm_per_v": ab.stage2_alone,
        "ls_two_stage_uncompensated_ppm_per_v": ab.two_stage,
        "ls_compensated_ppm_per_v": ab.compensated,
        "ratio_two_stage_to_alone": ab.two_stage / ab.stage2_alone,
        "ratio_compensated_to_uncompensated": ab.compensated / ab.two_stage,
    })


def cmd_tc_vs_k(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    with pywarnings.catch_warnings(record=True) as caught:
        pywarnings.simplefilter("always")
        res = analysis.find_optimal_k(ctx.cfg, sw.tc_vdd, sw.t_range, sw.t_step)
    ctx.report.warnings.extend(str(w.message) for w in caught)
    ctx.write_csv("tc_vs_k.csv", ["k", "tc_ppm_per_c"], zip(res.scan.grid, res.scan.vref))
    ctx.metrics("tc_vs_k", {"k_num": res.k_num, "k_theory": res.k_theory, "gap": res.gap,
                            "tc_min_ppm_per_c": res.tc_min, "unimodal": res.unimodal})


def cmd_tc_vs_vdd(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    grid = np.round(np.arange(sw.vdd_range[0], sw.vdd_range[1] + 1e-9, 0.1), 10)
    with_s1 = analysis.tc_vs_vdd(ctx.cfg, grid, True, sw.t_range, sw.t_step)
    without = analysis.tc_vs_vdd(ctx.cfg, grid, False, sw.t_range, sw.t_step)
    ctx.write_csv("tc_vs_vdd.csv", ["vdd_v", "tc_with_stage1", "tc_stage2_alone"],
                  zip(grid, with_s1, without))
    ctx.metrics("tc_vs_vdd", {"spread_with_stage1": float(np.ptp(with_s1)),
                              "spread_stage2_alone": float(np.ptp(without))})


def cmd_m15_study(ctx: Context) -> None:
    lengths = [x * 1e-6 for x in ctx.args.lengths]
    sw = ctx.settings.sweeps
    grid = np.round(np.arange(sw.vdd_range[0], sw.vdd_range[1] + 1e-9, 0.02), 10)
    rows, metrics = [], {}
    for comp in (True, False):
        for c in analysis.m15_length_study(ctx.cfg, lengths, comp, vdd_grid=grid):
            for v, vo in zip(c.vdd, c.v_o):
                rows.append((c.length * 1e6, int(comp), c.lambda_d15, c.lambda_d12, v, vo))
            tag = f"l{c.length * 1e6:g}um_{'comp' if comp else 'nocomp'}"
            metrics[f"vo_ls_ppm_per_v_{tag}"] = analysis.ls_box(c.v_o, c.vdd)
            metrics[f"extremum_vdd_{tag}"] = math.nan if c.extremum_vdd is None else c.extremum_vdd
    ctx.write_csv("m15_study.csv", ["length_um", "compensated", "lambda_d15", "lambda_d12",
                                    "vdd_v", "vo_v"], rows)
    ctx.metrics("m15_study", metrics)


def cmd_psrr(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    vdd = ctx.args.vdd if ctx.args.vdd is not None else sw.psrr_vdd
    T = ctx.args.temp + KELVIN
    freq = smallsignal.default_freq_grid()
    cols, series, metrics = ["freq_hz"], [freq], {}
    tfs = {}
    for with_s1, tag in ((True, "with_stage1"), (False, "stage2_alone")):
        solve = solve_full if with_s1 else solve_stage2_only
        op = solve(ctx.cfg, vdd, T)
        ac = smallsignal.extract_ac(ctx.cfg, op, ctx.settings.caps, ctx.settings.cap_estimate)
        num = smallsignal.psrr_numeric(ac, freq)
        tf = smallsignal.psrr_symbolic(ac)
        tfs[tag] = (ac, tf)
        cols += [f"{tag}_db", f"{tag}_symbolic_db"]
        series += [num, tf.magnitude_db(freq)]
        fd = smallsignal.dc_sensitivity_fd(ctx.cfg, vdd, T, with_s1)
        peaks = smallsignal.interior_maxima(num)
        metrics.update({
            f"{tag}_db_at_{freq[0]:g}hz": num[0],
            f"{tag}_dc_fd_db": 20 * math.log10(abs(fd)),
            f"{tag}_max_abs_symbolic_dev_db": smallsignal.compare_tf(tf, freq, num).max_abs_db,
            f"{tag}_interior_maxima": len(peaks),
            f"{tag}_peak_freq_hz": freq[peaks[0]] if peaks else math.nan,
        })
    ac1, _ = tfs["with_stage1"]
    with pywarnings.catch_warnings():
        pywarnings.simplefilter("ignore", smallsignal.DimensionWarning)
        printed = smallsignal.psrr_printed(ac1)
    ctx.report.warnings.append("printed PSRR form is dimensionally inconsistent; shown for comparison")
    cols.append("printed_form_db")
    series.append(printed.magnitude_db(freq))
    metrics["printed_form_max_abs_dev_db"] = smallsignal.compare_tf(printed, freq, series[1]).max_abs_db
    ctx.write_csv("psrr.csv", cols, zip(*series))
    ctx.metrics("psrr", metrics)


def cmd_corners(ctx: Context) -> None:
    sw = ctx.settings.sweeps
    rows = []
    for name, corner in ctx.settings.corners.items():
        c = variation.apply_corner(ctx.loaded.circuit if not ctx.args.ideal_model
                                   else analysis.ideal(ctx.loaded.circuit), corner)
        if ctx.args.trim_code is not None:
            c = c.with_trim_code(ctx.args.trim_code)
        ts = analysis.sweep_temperature(c, sw.tc_vdd, sw.t_range, sw.t_step, ctx.with_stage1)
        op = ctx.solve()(c, sw.tc_vdd, sw.ls_temperature + KELVIN)
        rows.append((name, analysis.tc_box(ts.vref, ts.grid), op.v_ref, op.power))
    ctx.write_csv("corners.csv", ["corner", "tc_ppm_per_c", "vref_v", "power_w"], rows)
    ctx.metrics("corners", {f"tc_{r[0]}": r[1] for r in rows})


def cmd_monte_carlo(ctx: Context) -> None:
    base = ctx.settings.mc
    kw = {}
    if ctx.args.seed is not None:
        kw["seed"] = ctx.args.seed
    if ctx.args.runs is not None:
        kw["runs"] = ctx.args.runs
    if ctx.args.workers is not None:
        kw["workers"] = ctx.args.workers
    mc = replace(base, **kw)
    rep = variation.monte_carlo(ctx.cfg, mc)
    rows = [[r] + [rep.samples[m][k] for m in variation.METRICS]
            for k, r in enumerate(rep.ok_runs)]
    ctx.write_csv("monte_carlo_runs.csv", ["run"] + list(variation.METRICS), rows)
    hist_rows = []
    for m in variation.METRICS:
        counts, edges = rep.histogram(m)
        for k, n in enumerate(counts):
            hist_rows.append((m, edges[k], edges[k + 1], int(n)))
    ctx.write_csv("monte_carlo_hist.csv", ["metric", "lo", "hi", "count"], hist_rows)
    metrics = {"seed": rep.seed, "runs": rep.runs, "failed": len(rep.failed), "rng": rep.rng}
    for m in variation.METRICS:
        metrics[f"{m}_mean"] = rep.mean(m)
        metrics[f"{m}_std"] = rep.std(m)
    ctx.report.warnings.extend(rep.failed)
    ctx.metrics("monte_carlo", metrics)


def cmd_trim(ctx: Context) -> None:
    if ctx.cfg.trim is None:
        raise ConfigurationError("configuration has no trim network")
    sw = ctx.settings.sweeps
    base = ctx.loaded.circuit if not ctx.args.ideal_model else analysis.ideal(ctx.loaded.circuit)
    if ctx.args.trim_code is not None:
        base = base.with_trim_code(ctx.args.trim_code)
    names = [ctx.args.corner] if ctx.args.corner else list(ctx.settings.corners)
    rows, metrics = [], {}
    for name in names:
        r = variation.trim_search(base, ctx.settings.corners[name], sw.tc_vdd, sw.trim_t_range)
        for code, tc in enumerate(r.tc_by_code):
            rows.append((name, code, base.trim.w3_eff(code) * 1e6, tc, int(code == r.best_code)))
        metrics[f"best_code_{name}"] = r.best_code
        metrics[f"tc_best_{name}"] = r.tc_by_code[r.best_code]
        metrics[f"tc_nominal_{name}"] = r.tc_by_code[r.nominal_code]
    ctx.write_csv("trim.csv", ["corner", "code", "w3_um", "tc_ppm_per_c", "selected"], rows)
    ctx.metrics("trim", metrics)


def cmd_check_analytic(ctx: Context) -> Optional[int]:
    checks = analysis.analytic_checks(ctx.cfg, ctx.settings.sweeps.tc_vdd)
    fit = analytic.fit_ln1mx()
    p = analytic.REFERENCE_FIT
    ctx.write_csv("check_analytic.csv", ["check", "max_dev", "tolerance", "unit", "passed"],
                  [(c.name, c.max_dev, "" if c.tolerance is None else c.tolerance, c.unit,
                    int(c.passed)) for c in checks])
    ctx.write_csv("fit_ln1mx.csv", ["source", "c1", "c2", "r2", "x_lo", "x_hi"],
                  [("refit", fit.c1, fit.c2, fit.r2, *fit.x_range),
                   ("reference", p.c1, p.c2, p.r2, *p.x_range)])
    metrics = {f"{c.name}_max_dev": c.max_dev for c in checks}
    metrics["all_passed"] = all(c.passed for c in checks)
    ctx.metrics("check_analytic", metrics)
    return EXIT_OK if metrics["all_passed"] else EXIT_FAILED_CHECK


COMMANDS: dict[str, Callable[[Context], Optional[int]]] = {
    "op": cmd_op,
    "sweep-temp": cmd_sweep_temp,
    "sweep-vdd": cmd_sweep_vdd,
    "ls-ablation": cmd_ls_ablation,
    "tc-vs-k": cmd_tc_vs_k,
    "tc-vs-vdd": cmd_tc_vs_vdd,
    "m15-study": cmd_m15_study,
    "psrr": cmd_psrr,
    "corners": cmd_corners,
    "monte-carlo": cmd_monte_carlo,
    "trim": cmd_trim,
    "check-analytic": cmd_check_analytic,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="parameter file (default: shipped generic180)")
    common.add_argument("--out-dir", default=".", help="directory for CSV output")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--corner", help="apply a process corner by name")
    common.add_argument("--trim-code", type=int, choices=range(8), metavar="{0..7}")
    common.add_argument("--no-stage1", action="store_true",
                        help="supply stage 2 straight from VDD")
    common.add_argument("--ideal-model", action="store_true",
                        help="drop the drain factor, DIBL and stage-2 loading")
    p = argparse.ArgumentParser(prog="vrefkit", parents=[common],
                                description="Two-stage subthreshold voltage reference studies.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--vdd", type=float, help="supply voltage, V")
        sp.add_argument("--temp", type=float, default=25.0, help="temperature, degC")
        if name == "monte-carlo":
            sp.add_argument("--runs", type=int)
            sp.add_argument("--workers", type=int)
        if name == "m15-study":
            sp.add_argument("--lengths", type=float, nargs="+", default=[0.18, 0.3, 0.5, 1.0],
                            help="M15 channel lengths, um")
    return p


def run(argv: Optional[Sequence[str]] = None) -> tuple[int, Optional[RunReport]]:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        loaded = load_config(args.config)
        ctx = Context(args, loaded)
        ctx.report.warnings.extend(loaded.settings.warnings)
        code = COMMANDS[args.command](ctx) or EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE, None
    except (ModelDomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL, None
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO, None
    ctx.report.duration_s = time.perf_counter() - start
    return code, ctx.report


def main(argv: Optional[Sequence[str]] = None) -> int:
    code, report = run(argv)
    if report is not None:
        print(report.summary())
    return code


if __name__ == "__main__":
    sys.exit(main())
