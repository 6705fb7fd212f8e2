"""Predicted-mean-vote comfort index.

Two evaluation paths:

* a simplified index that is an explicit rational function of air
  temperature and aggregate fan throughput, obtained by (i) setting the
  radiant temperature equal to the air temperature, (ii) linearizing the
  fourth-power radiation exchange, (iii) solving the clothing-surface
  temperature balance in closed form, and (iv) replacing humidity by its
  steady-state ventilation balance -- cheap enough to sit inside a PDE
  objective and smooth enough for analytic derivatives;
* a reference index with the full fourth-power radiation term and a
  fixed-point iteration for the clothing temperature, used as a
  validation oracle only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError

STANDARD_ATMOSPHERE_PA = 1.013e5
VAPOR_PRESSURE_FACTOR = 1.608  # ideal-gas conversion, p_a = 1.608 p_o w_i
DEFAULT_FLOW_FLOOR = 0.05  # m^3/s, keeps the 1/flow humidity term bounded
TEMP_RANGE = (-10.0, 50.0)  # admissible air temperatures, degC


@dataclass(frozen=True)
class PersonalParams:
    """Occupant and ventilation parameters feeding the comfort index."""

    metabolic_rate: float  # M, W/m^2
    external_work: float = 0.0  # W, W/m^2
    clothing_insulation: float = 0.155  # I_cl, m^2 degC / W
    h_convective: float = 3.1  # h_c, W/m^2 degC (still-air default)
    supply_humidity: float = 0.005  # w_o, kg/kg
    moisture_rate: float = 4.0 / 86400.0  # m_g, kg/s (4 kg/day household)
    air_density: float = 1.25  # rho, kg/m^3
    fan_area: float = 0.5  # A, m^2
    flow_floor: float = DEFAULT_FLOW_FLOOR

    def __post_init__(self):
        if self.metabolic_rate <= 0:
            raise ParameterError("metabolic rate must be positive")
        if self.clothing_insulation < 0:
            raise ParameterError("clothing insulation must be nonnegative")
        if self.h_convective <= 0 or self.air_density <= 0 or self.fan_area <= 0:
            raise ParameterError("h_c, air density and fan area must be positive")
        if self.flow_floor <= 0:
            raise ParameterError("flow floor must be positive")

    @property
    def f_cl(self):
        i = self.clothing_insulation
        return 1.0 + 1.29 * i if i <= 0.078 else 1.05 + 0.645 * i


@dataclass(frozen=True)
class PMVCoefficients:
    """Coefficients of pmv = a0 + (a1 f + a2)/(a3 f) + a4 T + a5 T^2
    + (a6 + a7 T)/(a8 + a9 T + a10 T^2)."""

    a: tuple

    def __post_init__(self):
        if len(self.a) != 11:
            raise ParameterError("need exactly 11 coefficients a0..a10")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))

    def __getitem__(self, i):
        return self.a[i]

    def denominator(self, T):
        a = self.a
        return a[8] + a[9] * T + a[10] * T * T


def _validate_coefficients(c):
    a = c.a
    if a[3] <= 0:
        raise ParameterError("a3 = rho*A must be positive")
    if a[8] != 1.0:
        raise ParameterError("a8 must equal 1")
    lo, hi = TEMP_RANGE
    grid = np.linspace(lo, hi, 241)
    if np.any(c.denominator(grid) <= 0):
        raise ParameterError(
            f"pmv denominator not positive over [{lo}, {hi}] degC"
        )


def compute_coefficients(p: PersonalParams) -> PMVCoefficients:
    """Closed-form coefficients of the simplified index.

    The heat-balance terms that do not involve temperature or humidity are
    collected in a0; the vapor-pressure terms become the (a1 f + a2)/(a3 f)
    ventilation fraction; the clothing heat-loss term, with the linearized
    radiation coefficient 4.6 (1 + 0.01 T) and the explicit clothing
    temperature, reduces to a rational function of T that is split into a
    linear part (absorbed in a4) and a proper fraction (a6 + a7 T) over the
    normalized denominator 1 + a9 T. A zero clothing insulation degenerates
    the fraction into the quadratic a4 T + a5 T^2 form.
    """
    M, W = p.metabolic_rate, p.external_work
    icl, hc, fcl = p.clothing_insulation, p.h_convective, p.f_cl
    E = 0.303 * np.exp(-0.036 * M) + 0.028
    hum = E * (3.05e-3 + 1.7e-5 * M)
    B = 35.7 - 0.028 * (M - W)
    c0 = hc + 4.6

    a0 = E * (
        (M - W)
        - 3.05e-3 * (5733.0 - 6.99 * (M - W))
        - 0.42 * (M - W - 58.15)
        - 1.7e-5 * M * 5867.0
        - 0.0014 * M * 34.0
    )
    a1 = hum * VAPOR_PRESSURE_FACTOR * STANDARD_ATMOSPHERE_PA * p.supply_humidity \
        * p.air_density * p.fan_area
    a2 = hum * VAPOR_PRESSURE_FACTOR * STANDARD_ATMOSPHERE_PA * p.moisture_rate
    a3 = p.air_density * p.fan_area

    if icl > 0:
        d0 = 1.0 + icl * fcl * c0
        d1 = 0.046 * icl * fcl
        n0 = -fcl * c0 * B
        n1 = fcl * (c0 - 0.046 * B)
        a4 = E * (0.0014 * M + 1.0 / icl)
        a5 = 0.0
        a6 = E * n0 / d0
        a7 = E * (n1 - d0 / icl) / d0
        a9 = d1 / d0
        a10 = 0.0
    else:
        a4 = E * (0.0014 * M + fcl * (c0 - 0.046 * B))
        a5 = 0.046 * fcl * E
        a6 = E * (-fcl * c0 * B)
        a7 = a9 = a10 = 0.0

    coeffs = PMVCoefficients((a0, a1, a2, a3, a4, a5, a6, a7, 1.0, a9, a10))
    _validate_coefficients(coeffs)
    return coeffs


def clamp_flow(flow, floor):
    """Clamped flow and a flag telling whether clamping was applied."""
    if flow < floor:
        return floor, True
    return float(flow), False


def pmv_simplified(c, T_e, fan_flow, flow_floor=DEFAULT_FLOW_FLOOR):
    """Simplified index at temperature T_e (degC) and fan throughput (m^3/s)."""
    f, _clamped = clamp_flow(fan_flow, flow_floor)
    a = c.a
    out = a[0] + a[4] * T_e + a[5] * T_e * T_e
    if a[3] != 0.0:
        out = out + (a[1] * f + a[2]) / (a[3] * f)
    if a[6] != 0.0 or a[7] != 0.0:
        out = out + (a[6] + a[7] * T_e) / c.denominator(T_e)
    return out


def pmv_temperature_derivative(c, T_e):
    """Analytic d pmv / d T at fixed flow."""
    a = c.a
    out = a[4] + 2.0 * a[5] * T_e
    if a[6] != 0.0 or a[7] != 0.0:
        den = c.denominator(T_e)
        dden = a[9] + 2.0 * a[10] * T_e
        out = out + (a[7] * den - (a[6] + a[7] * T_e) * dden) / (den * den)
    return out


def pmv_flow_derivative(c, fan_flow, flow_floor=DEFAULT_FLOW_FLOOR):
    """Analytic d pmv / d flow; zero on the clamped branch."""
    f, clamped = clamp_flow(fan_flow, flow_floor)
    if clamped or c.a[3] == 0.0:
        return 0.0
    return -c.a[2] / (c.a[3] * f * f)


def humidity_steady(p, fan_flow):
    """Steady ventilation humidity balance.

    w_i = (w_o rho A f + m_g) / (rho A f); partial vapor pressure
    p_a = 1.608 p_o w_i with p_o the standard atmosphere.
    """
    f, _ = clamp_flow(fan_flow, p.flow_floor)
    w_i = (p.supply_humidity * p.air_density * p.fan_area * f + p.moisture_rate) / (
        p.air_density * p.fan_area * f
    )
    p_a = VAPOR_PRESSURE_FACTOR * STANDARD_ATMOSPHERE_PA * w_i
    return w_i, p_a


def radiation_fourth_power(f_cl, T_cl, T_r):
    """Fourth-power radiation exchange term of the full heat balance."""
    return 3.96e-8 * f_cl * ((T_cl + 273.0) ** 4 - (T_r + 273.0) ** 4)


def radiation_linearized(f_cl, T_cl, T_r):
    """Low-order replacement 4.6 f_cl (1 + 0.01 T_r)(T_cl - T_r)."""
    return 4.6 * f_cl * (1.0 + 0.01 * T_r) * (T_cl - T_r)


def clothing_temperature(p, T_e, T_r, v_air, max_iter=100, tol=1e-8):
    """Fixed-point clothing-surface temperature with full radiation.

    The convective coefficient follows the classic max() closure between
    natural and forced convection, so still air falls back to the natural
    branch.
    """
    M, W, icl, fcl = p.metabolic_rate, p.external_work, p.clothing_insulation, p.f_cl
    t_cl = T_e
    for _ in range(max_iter):
        hc = max(2.38 * abs(t_cl - T_e) ** 0.25, 12.1 * np.sqrt(max(v_air, 0.0)))
        hc = max(hc, 1e-6)
        new = 35.7 - 0.028 * (M - W) - icl * (
            radiation_fourth_power(fcl, t_cl, T_r) + fcl * hc * (t_cl - T_e)
        )
        if abs(new - t_cl) < tol:
            return new, hc
        t_cl = 0.5 * t_cl + 0.5 * new
    raise NumericalError("clothing temperature iteration did not converge in 100 steps")


def pmv_fanger_reference(p, T_e, T_r, p_a, v_air):
    """Full iterative index; validation oracle for the simplified path."""
    M, W, fcl = p.metabolic_rate, p.external_work, p.f_cl
    t_cl, hc = clothing_temperature(p, T_e, T_r, v_air)
    E = 0.303 * np.exp(-0.036 * M) + 0.028
    return E * (
        (M - W)
        - 3.05e-3 * (5733.0 - 6.99 * (M - W) - p_a)
        - 0.42 * (M - W - 58.15)
        - 1.7e-5 * M * (5867.0 - p_a)
        - 0.0014 * M * (34.0 - T_e)
        - radiation_fourth_power(fcl, t_cl, T_r)
        - fcl * hc * (t_cl - T_e)
    )
