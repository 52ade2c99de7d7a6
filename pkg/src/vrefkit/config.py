"""Parameter-file loading: YAML in engineering units, SI out.

Every key is checked against a fixed schema; unknown or malformed keys
are reported with their dotted path and source line.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from vrefkit import analytic
from vrefkit.circuit import (
    STAGE1_NAMES,
    STAGE2_NAMES,
    CircuitConfig,
    ConfigurationError,
    ModelFlags,
    SolverSettings,
    Stage1Config,
    Stage2Config,
    TrimNetwork,
    wire_check,
)
from vrefkit.device import DeviceClassParams, ModelDomainError, OxideClass, TransistorParams
from vrefkit.smallsignal import CapEstimate
from vrefkit.variation import CornerSpec, McConfig

UM = 1e-6
MV = 1e-3
UA = 1e-6
FF_PER_UM2 = 1e-15 / 1e-12  # fF/um^2 -> F/m^2
FORMAT_VERSION = 1
DEFAULT_NAME = "generic180"


class SchemaError(ConfigurationError):
    pass


# Schema leaves: (type, required). Nested dicts are sub-schemas; "*" matches any key.
NUM = (float, True)
OPT = (float, False)
CLASS_SCHEMA = {"mu_cox": NUM, "n": NUM, "vth0": NUM, "alpha": NUM, "lambda_d": NUM}
DEVICE_SCHEMA = {"class": (str, True), "w": NUM, "l": NUM, "mult": (int, False),
                 "vth0": OPT, "alpha": OPT, "lambda_d": ((float, str), False)}
CORNER_SCHEMA = {"dvth_thin": NUM, "dvth_thick": NUM, "mu_scale_thin": NUM, "mu_scale_thick": NUM}
SCHEMA = {
    "format_version": (int, True),
    "name": (str, False),
    "device_classes": {"thin": CLASS_SCHEMA, "thick": CLASS_SCHEMA},
    "transistors": {n: DEVICE_SCHEMA for n in STAGE2_NAMES + STAGE1_NAMES},
    "trim": ({"w3_base": NUM, "w3_bits": (list, True), "code": (int, True)}, False),
    "flags": ({"drain_factor": (bool, False), "dibl": (bool, False),
               "stage2_loading": (bool, False)}, False),
    "solver": ({"tol_v": OPT, "tol_rel_i": OPT, "max_iter": (int, False),
                "max_halvings": (int, False)}, False),
    "vdd_min": OPT,
    "corners": ({"*": CORNER_SCHEMA}, False),
    "monte_carlo": ({"seed": (int, False), "runs": (int, False), "sigma_vth_global": OPT,
                     "a_vt": OPT, "sigma_mu_rel": OPT, "t_step": OPT, "vdd_step": OPT,
                     "workers": (int, False)}, False),
    "caps": ({"c_thin": OPT, "c_thick": OPT, "overlap": OPT, "ds_coupling": OPT,
              "c1": OPT, "c2": OPT, "c3": OPT, "c4": OPT}, False),
    "sweeps": ({"tc_vdd": OPT, "t_range": (list, False), "t_step": OPT,
                "ls_temperature": OPT, "vdd_range": (list, False), "vdd_step": OPT,
                "psrr_vdd": OPT, "trim_t_range": (list, False)}, False),
}


@dataclass(frozen=True)
class Sweeps:
    tc_vdd: float = 1.2
    t_range: tuple[float, float] = (0.0, 80.0)
    t_step: float = 1.0
    ls_temperature: float = 25.0
    vdd_range: tuple[float, float] = (0.4, 2.0)
    vdd_step: float = 0.01
    psrr_vdd: float = 1.0
    trim_t_range: tuple[float, float] = (-10.0, 85.0)


@dataclass(frozen=True)
class Settings:
    """Everything in a parameter file besides the circuit itself."""

    name: str
    corners: dict
    mc: McConfig
    caps: Optional[tuple[float, float, float, float]]
    cap_estimate: CapEstimate
    sweeps: Sweeps
    digest: str
    warnings: tuple[str, ...] = ()
    source: str = ""


@dataclass(frozen=True)
class LoadedConfig:
    circuit: CircuitConfig
    settings: Settings


# --------------------------------------------------------------------------
# YAML with line tracking

_SCALARS = yaml.SafeLoader("")


def _plain(node: yaml.Node, path: str, lines: dict) -> Any:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(k.value)
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise SchemaError([f"{sub} (line {k.start_mark.line + 1}): duplicate key"])
            out[key] = _plain(v, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return _SCALARS.construct_object(node)


def _parse(text: str) -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise SchemaError([f"YAML syntax: {exc}"]) from None
    if node is None:
        raise SchemaError(["empty parameter file"])
    lines: dict = {}
    data = _plain(node, "", lines)
    if not isinstance(data, dict):
        raise SchemaError(["top level must be a mapping"])
    return data, lines


def _type_ok(value, typ) -> bool:
    types = typ if isinstance(typ, tuple) else (typ,)
    if isinstance(value, bool):
        return bool in types
    if float in types and isinstance(value, int):
        return True
    return isinstance(value, types)


def _validate(data: dict, schema: dict, path: str, lines: dict, problems: list) -> None:
    def where(p):
        return f"{p} (line {lines.get(p, '?')})"

    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        spec = schema.get(key, schema.get("*"))
        if spec is None:
            problems.append(f"{where(sub)}: unknown key")
            continue
        if isinstance(spec, tuple) and isinstance(spec[0], dict):
            spec = spec[0]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                problems.append(f"{where(sub)}: expected a mapping")
            else:
                _validate(value, spec, sub, lines, problems)
            continue
        typ, _ = spec
        if not _type_ok(value, typ):
            name = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
            problems.append(f"{where(sub)}: expected {name}, got {type(value).__name__}")
    for key, spec in schema.items():
        if key == "*":
            continue
        required = spec[1] if isinstance(spec, tuple) else True
        if required and key not in data:
            problems.append(f"{path + '.' if path else ''}{key}: required key missing"
                            + (f" (in block at line {lines[path]})" if path in lines else ""))


# --------------------------------------------------------------------------
# construction

def _device(name: str, d: dict, classes: dict, class_defaults: dict, lam12) -> TransistorParams:
    cls = d["class"]
    base = class_defaults[cls]
    lam = d.get("lambda_d", base["lambda_d"])
    lam = lam12 if lam == "auto" else lam * MV
    return TransistorParams(
        name=name, dclass=classes[cls], w=d["w"] * UM, l=d["l"] * UM,
        vth0=d.get("vth0", base["vth0"]) * MV, alpha=d.get("alpha", base["alpha"]) * MV,
        lambda_d=lam, mult=d.get("mult", 1))


def _pair(v, path, problems):
    if not (isinstance(v, list) and len(v) == 2 and all(_type_ok(x, float) for x in v)):
        problems.append(f"{path}: expected [lo, hi]")
        return None
    return float(v[0]), float(v[1])


def build(data: dict, lines: Optional[dict] = None, source: str = "") -> LoadedConfig:
    lines = lines or {}
    problems: list[str] = []
    _validate(data, SCHEMA, "", lines, problems)
    if problems:
        raise SchemaError(problems)
    if data["format_version"] != FORMAT_VERSION:
        raise SchemaError([f"format_version: unsupported version {data['format_version']}"])

    classes, defaults = {}, {}
    for cname, c in data["device_classes"].items():
        try:
            classes[cname] = DeviceClassParams(OxideClass(cname), c["mu_cox"] * UA, c["n"])
        except ModelDomainError as exc:
            problems.append(f"device_classes.{cname} (line {lines.get('device_classes.' + cname, '?')}): {exc}")
        defaults[cname] = c
    trs = data["transistors"]
    for name, d in trs.items():
        if d["class"] not in ("thin", "thick"):
            problems.append(f"transistors.{name}.class (line {lines.get(f'transistors.{name}.class', '?')}): "
                            f"unknown class {d['class']!r}")
        lam = d.get("lambda_d")
        if isinstance(lam, str) and (lam != "auto" or name != "m12"):
            problems.append(f"transistors.{name}.lambda_d: 'auto' is only allowed on m12")
    if problems:
        raise SchemaError(problems)

    # M12's DIBL factor from the cancellation rule, refit coefficients
    lam15 = trs["m15"].get("lambda_d", defaults[trs["m15"]["class"]]["lambda_d"]) * MV
    n_r = classes[trs["m11"]["class"]].n / classes[trs["m12"]["class"]].n
    lam12 = analytic.dibl_compensation_eq18(lam15, n_r, analytic.fit_ln1mx().c1)

    devs = {}
    for name in STAGE2_NAMES + STAGE1_NAMES:
        p = f"transistors.{name}"
        try:
            devs[name] = _device(name, trs[name], classes, defaults, lam12)
        except ModelDomainError as exc:
            problems.append(f"{p} (line {lines.get(p, '?')}): {exc}")
    if problems:
        raise SchemaError(problems)

    trim = None
    if "trim" in data:
        t = data["trim"]
        bits = t["w3_bits"]
        if len(bits) != 3 or not all(_type_ok(b, float) for b in bits):
            raise SchemaError([f"trim.w3_bits (line {lines.get('trim.w3_bits', '?')}): "
                               "expected three widths"])
        trim = TrimNetwork(t["w3_base"] * UM, tuple(b * UM for b in bits), t["code"])

    flags = ModelFlags(**data.get("flags", {}))
    try:
        solver = SolverSettings(**data.get("solver", {}))
    except ValueError as exc:
        raise SchemaError([f"solver: {exc}"]) from None
    cfg = CircuitConfig(
        Stage1Config(*(devs[n] for n in STAGE1_NAMES)),
        Stage2Config(*(devs[n] for n in STAGE2_NAMES)),
        trim=trim, flags=flags, solver=solver, vdd_min=data.get("vdd_min", 0.4))
    diag = wire_check(cfg)

    corners = {}
    for cname, c in data.get("corners", {}).items():
        corners[cname] = CornerSpec(cname, c["dvth_thin"] * MV, c["dvth_thick"] * MV,
                                    c["mu_scale_thin"], c["mu_scale_thick"])
    if not corners:
        from vrefkit.variation import CORNERS
        corners = dict(CORNERS)

    m = dict(data.get("monte_carlo", {}))
    for k in ("sigma_vth_global",):
        if k in m:
            m[k] *= MV
    if "a_vt" in m:
        m["a_vt"] *= MV * UM
    sw = data.get("sweeps", {})
    sweeps_kw = {}
    for k, v in sw.items():
        if k.endswith("_range"):
            pair = _pair(v, f"sweeps.{k}", problems)
            if pair:
                sweeps_kw[k] = pair
        else:
            sweeps_kw[k] = float(v)
    if problems:
        raise SchemaError(problems)
    sweeps = Sweeps(**sweeps_kw)
    mc = McConfig(**m, vdd=sweeps.tc_vdd, t_range=sweeps.t_range, vdd_range=sweeps.vdd_range)

    cap_kw = dict(data.get("caps", {}))
    explicit = [cap_kw.pop(k, None) for k in ("c1", "c2", "c3", "c4")]
    if any(c is not None for c in explicit):
        if not all(c is not None for c in explicit):
            raise SchemaError(["caps: give all of c1..c4 or none"])
        caps = tuple(c * 1e-15 for c in explicit)
    else:
        caps = None
    for k in ("c_thin", "c_thick"):
        if k in cap_kw:
            cap_kw[k] *= FF_PER_UM2
    est = CapEstimate(**cap_kw)

    digest = config_digest(data)
    settings = Settings(data.get("name", ""), corners, mc, caps, est, sweeps, digest,
                        diag.warnings, source)
    return LoadedConfig(cfg, settings)


def config_digest(data: dict) -> str:
    """Digest of the parsed parameter content (independent of comments/formatting)."""
    return hashlib.sha256(repr(_canonical(data)).encode()).hexdigest()[:16]


def _canonical(x):
    if isinstance(x, dict):
        return tuple(sorted((k, _canonical(v)) for k, v in x.items()))
    if isinstance(x, list):
        return tuple(_canonical(v) for v in x)
    return x


def loads(text: str, source: str = "<string>") -> LoadedConfig:
    data, lines = _parse(text)
    return build(data, lines, source)


def load_config(path: Union[str, Path, None] = None) -> LoadedConfig:
    """Load a parameter file; ``None`` loads the shipped default set."""
    if path is None:
        return loads(default_text(), f"<{DEFAULT_NAME}>")
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), str(path))


def default_text() -> str:
    return resources.files("vrefkit").joinpath(f"data/{DEFAULT_NAME}.yaml").read_text(encoding="utf-8")


def default_config() -> CircuitConfig:
    return load_config().circuit
