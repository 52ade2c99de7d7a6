"""Supply-rejection analysis of the linearised reference.

Every device is replaced by its gm/gds pair at the operating point and
the node capacitances c1..c4 are added::

    c1: v_REF - gnd        c2: v_REF - stage-2 supply (V_O, or V_DD alone)
    c3: v_O   - gnd        c4: v_O   - V_DD

V_X and V_PTAT carry no capacitance, so they are eliminated exactly and
the transfer v_REF/v_DD is a ratio of polynomials of degree <= 2 in s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from vrefkit.circuit import CircuitConfig, ConfigurationError, OperatingPoint
from vrefkit.device import BiasPoint, OxideClass, SmallSignal, small_signal

# terminals (drain, gate, source) of each device
TERMINALS = {
    "m11": ("vx", "vx", "gnd"),
    "m12": ("vdd", "vo", "vx"),
    "m13": ("vo", "vx", "gnd"),
    "m14": ("vo", "vo", "gnd"),
    "m15": ("vdd", "vo", "vo"),
    "m1": ("vptat", "vptat", "gnd"),
    "m2": ("supply", "vptat", "vptat"),
    "m3": ("vref", "vref", "gnd"),
    "m4": ("supply", "vptat", "vref"),
}
STAGE2 = ("m1", "m2", "m3", "m4")


class DimensionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CapEstimate:
    """Gate-area capacitance proxy, F/m^2 per oxide class.

    ``overlap`` is the fraction of a device's gate capacitance that sits
    in the gate-drain (or gate-source) overlap. ``ds_coupling`` is the
    much smaller direct drain-source fraction of the long-channel M4.
    """

    c_thin: float = 8e-3
    c_thick: float = 5e-3
    overlap: float = 0.1
    ds_coupling: float = 1e-7

    def gate(self, dev) -> float:
        c = self.c_thin if dev.oxide_class is OxideClass.THIN else self.c_thick
        return c * dev.area


def estimate_caps(cfg: CircuitConfig, est: CapEstimate = CapEstimate()) -> tuple[float, ...]:
    s2, s1 = cfg.effective_stage2(), cfg.stage1
    g = est.gate
    # M4's gate sits on V_PTAT, so only its source overlap loads V_REF
    c1 = g(s2.m3) + est.overlap * g(s2.m4)
    c2 = est.ds_coupling * g(s2.m4)
    c3 = g(s1.m14) + g(s1.m12) + est.overlap * g(s1.m13)
    c4 = est.overlap * (g(s1.m15) + g(s1.m12))
    return c1, c2, c3, c4


@dataclass(frozen=True)
class AcParams:
    ss: Mapping[str, SmallSignal]
    c1: float
    c2: float
    c3: float
    c4: float
    with_stage1: bool = True
    stage2_loading: bool = True
    omit_ro15: bool = False

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3, self.c4) < 0:
            raise ConfigurationError(["capacitances must be non-negative"])
        if any(v.gm < 0 for v in self.ss.values()):
            raise ConfigurationError(["gm must be non-negative"])

    def ro(self, name: str) -> float:
        return self.ss[name].ro

    @property
    def caps(self) -> tuple[float, float, float, float]:
        return self.c1, self.c2, self.c3, self.c4


def _biases(op: OperatingPoint) -> dict[str, tuple[float, float]]:
    supply = op.v_o if op.with_stage1 else op.vdd
    b = {
        "m1": (op.v_ptat, op.v_ptat),
        "m2": (0.0, supply - op.v_ptat),
        "m3": (op.v_ref, op.v_ref),
        "m4": (op.v_ptat - op.v_ref, supply - op.v_ref),
    }
    if op.with_stage1:
        b.update({
            "m11": (op.v_x, op.v_x),
            "m12": (op.v_o - op.v_x, op.vdd - op.v_x),
            "m13": (op.v_x, op.v_o),
            "m14": (op.v_o, op.v_o),
            "m15": (0.0, op.vdd - op.v_o),
        })
    return b


def extract_ac(cfg: CircuitConfig, op: OperatingPoint,
               caps: Optional[Sequence[float]] = None,
               estimate: Optional[CapEstimate] = CapEstimate(),
               omit_ro15: bool = False) -> AcParams:
    """Small-signal parameters at ``op``.

    ``caps`` = (c1, c2, c3, c4) overrides the area estimate; with neither
    given a ConfigurationError is raised.
    """
    if caps is None:
        if estimate is None:
            raise ConfigurationError(["no capacitances given and estimation disabled"])
        caps = estimate_caps(cfg, estimate)
    flags = cfg.flags
    devs = dict(cfg.devices())
    devs.update(zip(STAGE2, (cfg.effective_stage2().m1, cfg.effective_stage2().m2,
                             cfg.effective_stage2().m3, cfg.effective_stage2().m4)))
    ss = {name: small_signal(devs[name], BiasPoint(vgs, vds, op.temperature),
                             flags.drain_factor, flags.dibl)
          for name, (vgs, vds) in _biases(op).items()}
    return AcParams(ss, *caps, with_stage1=op.with_stage1,
                    stage2_loading=flags.stage2_loading, omit_ro15=omit_ro15)


# --------------------------------------------------------------------------
# nodal matrices

def _nodes(ac: AcParams) -> tuple[list[str], list[str]]:
    """(all unknown nodes, nodes kept after eliminating the cap-free ones)."""
    if ac.with_stage1:
        return ["vo", "vref", "vx", "vptat"], ["vo", "vref"]
    return ["vref", "vptat"], ["vref"]


def nodal_matrices(ac: AcParams):
    """Return (nodes, G, C, g_in, c_in) with (G + sC) v = -(g_in + s c_in) v_dd."""
    nodes, _ = _nodes(ac)
    idx = {n: i for i, n in enumerate(nodes)}
    supply = "vo" if ac.with_stage1 else "vdd"
    k = len(nodes)
    G = np.zeros((k, k))
    C = np.zeros((k, k))
    g_in = np.zeros(k)
    c_in = np.zeros(k)

    def add(row, col, val, mat, vec):
        if row not in idx:
            return
        if col == "vdd":
            vec[idx[row]] += val
        elif col in idx:
            mat[idx[row], idx[col]] += val

    for name, s in ac.ss.items():
        d, g, src = TERMINALS[name]
        d = supply if d == "supply" else d
        gds = 0.0 if (name == "m15" and ac.omit_ro15) else s.gds
        # drain current change: gm (vg - vs) + gds (vd - vs); leaves d, enters src
        terms = ((g, s.gm), (src, -s.gm - gds), (d, gds))
        rows = [(d, 1.0), (src, -1.0)]
        for row, sign in rows:
            if name in STAGE2 and row == "vo" and not ac.stage2_loading:
                continue
            for col, val in terms:
                add(row, col, sign * val, G, g_in)

    def cap(a, b, c):
        for row, other, sign in ((a, b, 1.0), (b, a, 1.0)):
            add(row, row, sign * c, C, c_in)
            add(row, other, -sign * c, C, c_in)

    cap("vref", "gnd", ac.c1)
    cap("vref", supply, ac.c2)
    if ac.with_stage1:
        cap("vo", "gnd", ac.c3)
        cap("vo", "vdd", ac.c4)
    return nodes, G, C, g_in, c_in


# --------------------------------------------------------------------------
# transfer functions

@dataclass(frozen=True)
class RationalTf:
    """Ratio of polynomials in s, coefficients in ascending powers."""

    numerator: np.ndarray
    denominator: np.ndarray
    as_printed: bool = False
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        num = P.polytrim(np.asarray(self.numerator, dtype=float), 0.0)
        den = P.polytrim(np.asarray(self.denominator, dtype=float), 0.0)
        if den[-1] == 0.0:
            raise ValueError("denominator is identically zero")
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)

    @property
    def poles(self) -> np.ndarray:
        return P.polyroots(self.denominator) if len(self.denominator) > 1 else np.array([])

    @property
    def zeros(self) -> np.ndarray:
        if len(self.numerator) <= 1:
            return np.array([])
        return P.polyroots(self.numerator)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.numerator)

    @property
    def dc_gain(self) -> float:
        if self.denominator[0] == 0.0:
            return math.inf
        return float(self.numerator[0] / self.denominator[0])

    def __call__(self, s):
        return P.polyval(s, self.numerator) / P.polyval(s, self.denominator)

    def magnitude_db(self, freq) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self(2j * np.pi * np.asarray(freq, dtype=float))))


def psrr_symbolic(ac: AcParams) -> RationalTf:
    """v_REF/v_DD of the linearised network as a rational function of s."""
    nodes, G, C, g_in, c_in = nodal_matrices(ac)
    _, kept = _nodes(ac)
    k = [nodes.index(n) for n in kept]
    e = [i for i in range(len(nodes)) if i not in k]
    # eliminated nodes have no capacitance, so the Schur complement stays affine in s
    assert not np.any(C[np.ix_(e, range(len(nodes)))]) and not np.any(c_in[e])
    X = np.linalg.solve(G[np.ix_(e, e)], np.column_stack([G[np.ix_(e, k)], g_in[e]]))
    A0 = G[np.ix_(k, k)] - G[np.ix_(k, e)] @ X[:, :-1]
    r0 = g_in[k] - G[np.ix_(k, e)] @ X[:, -1]
    A1 = C[np.ix_(k, k)]
    r1 = c_in[k]
    # entries as ascending polynomials; right-hand side is -(r0 + s r1)
    a = [[np.array([A0[i, j], A1[i, j]]) for j in range(len(k))] for i in range(len(k))]
    b = [-np.array([r0[i], r1[i]]) for i in range(len(k))]
    ir = kept.index("vref")
    if len(k) == 1:
        num, den = b[0], a[0][0]
    else:
        det = P.polysub(P.polymul(a[0][0], a[1][1]), P.polymul(a[0][1], a[1][0]))
        col = [row[:] for row in a]
        for i in range(2):
            col[i][ir] = b[i]
        num = P.polysub(P.polymul(col[0][0], col[1][1]), P.polymul(col[0][1], col[1][0]))
        den = det
    flags = ("all capacitances zero",) if not any(ac.caps) else ()
    return RationalTf(num, den, flags=flags)


def psrr_printed(ac: AcParams) -> RationalTf:
    """The factored product form, evaluated term by term as written.

    Its first denominator adds r_o4 (ohms) to a dimensionless 1; the
    result is returned with a dimensional-consistency flag.
    """
    warnings.warn("as-printed PSRR form is dimensionally inconsistent (2 r_o4 + 1)",
                  DimensionWarning, stacklevel=2)
    ro4 = ac.ro("m4")
    gm14 = ac.ss["m14"].gm if "m14" in ac.ss else math.nan
    f1_num = np.array([1.0, 2 * ro4 * ac.c2])
    f1_den = np.array([2 * ro4 + 1.0, 2 * ro4 * ac.c2])
    f2_num = np.array([0.0, ac.c4])
    f2_den = np.array([gm14, ac.c3 + ac.c4])
    return RationalTf(P.polymul(f1_num, f2_num), P.polymul(f1_den, f2_den), as_printed=True,
                      flags=("dimensionally inconsistent: 2*r_o4 + 1",))


def printed_poles_zeros(ac: AcParams) -> dict:
    """z1, p1, p2 of the factored form (rad/s), verbatim."""
    ro4 = ac.ro("m4")
    return {"z1": 1.0 / (2 * ro4 * ac.c2), "p1": (2 * ro4 + 1) / (2 * ro4 * ac.c2),
            "p2": ac.ss["m14"].gm / (ac.c3 + ac.c4)}


def default_freq_grid(f_lo: float = 1.0, f_hi: float = 1e10, per_decade: int = 20) -> np.ndarray:
    decades = math.log10(f_hi / f_lo)
    n = int(round(decades * per_decade))
    return f_lo * 10.0 ** (np.arange(n + 1) / per_decade)


def psrr_numeric(ac: AcParams, freq: Optional[Sequence[float]] = None) -> np.ndarray:
    """|v_REF/v_DD| in dB by a complex nodal solve at every frequency."""
    freq = default_freq_grid() if freq is None else np.asarray(freq, dtype=float)
    nodes, G, C, g_in, c_in = nodal_matrices(ac)
    ir = nodes.index("vref")
    out = np.empty(len(freq))
    for i, f in enumerate(freq):
        s = 2j * np.pi * f
        Y = G + s * C
        rhs = -(g_in + s * c_in)
        try:
            v = np.linalg.solve(Y, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular nodal matrix at {f:.6g} Hz") from exc
        out[i] = 20.0 * math.log10(abs(v[ir])) if v[ir] != 0 else -math.inf
    return out


@dataclass(frozen=True)
class TfComparison:
    max_abs_db: float
    at_freq: float
    deltas: np.ndarray = field(repr=False)


def compare_tf(tf: RationalTf, freq: Sequence[float], numeric_db: Sequence[float]) -> TfComparison:
    freq = np.asarray(freq, dtype=float)
    numeric_db = np.asarray(numeric_db, dtype=float)
    if freq.size == 0:
        raise ValueError("empty frequency grid")
    if freq.shape != numeric_db.shape:
        raise ValueError("frequency grid and numeric series differ in length")
    delta = tf.magnitude_db(freq) - numeric_db
    i = int(np.argmax(np.abs(delta)))
    return TfComparison(float(abs(delta[i])), float(freq[i]), delta)


def interior_maxima(series: Sequence[float], rel_tol: float = 1e-9) -> list[int]:
    """Indices of strict interior local maxima (ignoring numerical flats)."""
    y = np.asarray(series, dtype=float)
    tol = rel_tol * max(float(np.max(np.abs(y))), 1.0)
    return [i for i in range(1, len(y) - 1) if y[i] > y[i - 1] + tol and y[i] > y[i + 1] + tol]


def dc_sensitivity_fd(cfg: CircuitConfig, vdd: float, temperature: float,
                      with_stage1: bool = True, h: float = 1e-4) -> float:
    """dV_REF/dV_DD by central difference of the DC solve."""
    from vrefkit.circuit import solve_full, solve_stage2_only
    solve = solve_full if with_stage1 else solve_stage2_only
    return (solve(cfg, vdd + h, temperature).v_ref
            - solve(cfg, vdd - h, temperature).v_ref) / (2 * h)
