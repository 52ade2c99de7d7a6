"""Subthreshold MOSFET compact model.

Weak-inversion drain current with a linear threshold temperature
coefficient and a DIBL term::

    I_D = m * muCox * (W/L) * V_T^2 * exp((V_GS - V_TH) / (n V_T)) * (1 - exp(-V_DS / V_T))
    V_TH = V_TH0 + alpha * (T - T0) - lambda_D * V_DS

The GIDL factor is carried on the device record but never applied.
All quantities are SI (V, A, K, m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple

BOLTZMANN = 1.380649e-23  # J/K
ELEMENTARY_CHARGE = 1.602176634e-19  # C
T0 = 298.15  # K, threshold reference temperature (25 degC)


class ModelDomainError(ValueError):
    """Input outside the domain of the device model."""


class OxideClass(str, Enum):
    THIN = "thin"
    THICK = "thick"


@dataclass(frozen=True)
class DeviceClassParams:
    """Per-oxide-class process constants.

    ``mu_cox`` is the product of electron mobility and oxide capacitance
    (A/V^2); ``n`` is the subthreshold slope factor.
    """

    oxide_class: OxideClass
    mu_cox: float
    n: float

    def __post_init__(self):
        if not self.mu_cox > 0:
            raise ModelDomainError(f"mu_cox must be positive, got {self.mu_cox}")
        if not self.n > 1:
            raise ModelDomainError(f"slope factor n must exceed 1, got {self.n}")


@dataclass(frozen=True)
class TransistorParams:
    name: str
    dclass: DeviceClassParams
    w: float
    l: float
    vth0: float
    alpha: float
    lambda_d: float = 0.0
    mult: int = 1
    delta_gidl: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ModelDomainError(f"{self.name}: W and L must be positive")
        if int(self.mult) != self.mult or self.mult < 1:
            raise ModelDomainError(f"{self.name}: mult must be an integer >= 1")
        if not self.alpha < 0:
            raise ModelDomainError(f"{self.name}: alpha must be negative, got {self.alpha}")
        if self.lambda_d < 0:
            raise ModelDomainError(f"{self.name}: lambda_d must be >= 0")

    @property
    def oxide_class(self) -> OxideClass:
        return self.dclass.oxide_class

    @property
    def n(self) -> float:
        return self.dclass.n

    @property
    def aspect(self) -> float:
        """Effective W/L including the parallel multiplicity."""
        return self.mult * self.w / self.l

    @property
    def area(self) -> float:
        return self.mult * self.w * self.l

    def with_(self, **changes) -> "TransistorParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class BiasPoint:
    vgs: float
    vds: float
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ModelDomainError(f"temperature must be positive, got {self.temperature}")


class SmallSignal(NamedTuple):
    gm: float
    gds: float

    @property
    def ro(self) -> float:
        return math.inf if self.gds == 0 else 1.0 / self.gds


def thermal_voltage(temperature: float) -> float:
    if not temperature > 0:
        raise ModelDomainError(f"temperature must be positive, got {temperature}")
    return BOLTZMANN * temperature / ELEMENTARY_CHARGE


def threshold_voltage(dev: TransistorParams, temperature: float, vds: float = 0.0,
                      t0: float = T0) -> float:
    if not temperature > 0:
        raise ModelDomainError(f"temperature must be positive, got {temperature}")
    return dev.vth0 + dev.alpha * (temperature - t0) - dev.lambda_d * vds


def log_current(dev: TransistorParams, vgs: float, vds: float, temperature: float,
                drain_factor: bool = True, dibl: bool = True) -> tuple[float, float, float]:
    """Natural log of the drain current and its partial derivatives.

    Returns ``(ln I, d ln I / d vgs, d ln I / d vds)``. ``ln I`` is ``-inf``
    at ``vds == 0`` when the drain factor is active. Working in the log
    domain keeps the exponentials well scaled for the root finders.
    """
    vt = thermal_voltage(temperature)
    nvt = dev.dclass.n * vt
    vth = threshold_voltage(dev, temperature, vds if dibl else 0.0)
    ln_i = math.log(dev.dclass.mu_cox * dev.aspect * vt * vt) + (vgs - vth) / nvt
    d_vgs = 1.0 / nvt
    d_vds = dev.lambda_d / nvt if dibl else 0.0
    if drain_factor:
        x = vds / vt
        if x <= 0.0:
            return -math.inf, d_vgs, math.inf
        ln_i += math.log(-math.expm1(-x))
        d_vds += 1.0 / (vt * math.expm1(x))
    return ln_i, d_vgs, d_vds


def drain_current(dev: TransistorParams, bias: BiasPoint, drain_factor: bool = True,
                  dibl: bool = True) -> float:
    if bias.vds < 0:
        raise ModelDomainError(f"{dev.name}: reverse bias vds={bias.vds!r} is outside the model")
    ln_i, _, _ = log_current(dev, bias.vgs, bias.vds, bias.temperature, drain_factor, dibl)
    return math.exp(ln_i)


def small_signal(dev: TransistorParams, bias: BiasPoint, drain_factor: bool = True,
                 dibl: bool = True) -> SmallSignal:
    """Analytic gm = dI/dvgs and gds = dI/dvds at a bias point.

    gm is I/(n V_T). gds is the DIBL term I*lambda/(n V_T) plus the
    drain-factor term, which stays finite at vds = 0 where I itself is zero.
    """
    if bias.vds < 0:
        raise ModelDomainError(f"{dev.name}: reverse bias vds={bias.vds!r} is outside the model")
    vt = thermal_voltage(bias.temperature)
    nvt = dev.dclass.n * vt
    vth = threshold_voltage(dev, bias.temperature, bias.vds if dibl else 0.0)
    i_sat = dev.dclass.mu_cox * dev.aspect * vt * vt * math.exp((bias.vgs - vth) / nvt)
    factor = -math.expm1(-bias.vds / vt) if drain_factor else 1.0
    i_d = i_sat * factor
    gm = i_d / nvt
    gds = i_d * dev.lambda_d / nvt if dibl else 0.0
    if drain_factor:
        gds += i_sat * math.exp(-bias.vds / vt) / vt
    return SmallSignal(gm, gds)
