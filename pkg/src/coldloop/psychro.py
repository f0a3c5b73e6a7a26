"""Moist-air property functions for the evaporative tower solve.

Scalar, pure functions over SI units (temperatures in K unless a name says
otherwise). The saturation curve is a Magnus-form correlation over liquid
water with one pinned coefficient set; enthalpy uses the 0 degC dry-air /
liquid-water datum. These four properties (saturation pressure, humidity
ratio, enthalpy, wet bulb) are everything the tower model needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Specific heats and latent heat, J/(kg K) and J/kg.
C_P_DA = 1006.0  # dry air
C_P_V = 1860.0  # water vapor
C_P_W = 4186.0  # liquid water
H_FG_0 = 2.501e6  # latent heat of vaporization at 0 degC
MW_RATIO = 0.622  # molecular weight ratio vapor/dry air

# Magnus saturation-pressure correlation over liquid water:
#   p_sat = MAGNUS_A * exp(MAGNUS_B * t / (t + MAGNUS_C)),  t in degC.
# The same three constants are the oracle's source of truth in the tests.
MAGNUS_A = 610.94  # Pa
MAGNUS_B = 17.625
MAGNUS_C = 243.04  # degC

# Accepted temperature window for all property calls, K.
T_MIN = 173.15
T_MAX = 473.15

KELVIN = 273.15


class PsychroError(ValueError):
    """Raised for out-of-window temperatures or invalid moist-air inputs."""


def saturation_pressure(T: float) -> float:
    """Saturation vapor pressure over liquid water, Pa.

    Args:
        T: dry-bulb temperature, K; must lie in [T_MIN, T_MAX].
    """
    if not (T_MIN <= T <= T_MAX):
        raise PsychroError(f"temperature {T} K outside [{T_MIN}, {T_MAX}] K")
    t = T - KELVIN
    return MAGNUS_A * math.exp(MAGNUS_B * t / (t + MAGNUS_C))


def humidity_ratio_from_rh(T: float, phi: float, p: float) -> float:
    """Humidity ratio X (kg vapor / kg dry air) from relative humidity.

    Args:
        T: dry-bulb temperature, K.
        phi: relative humidity in [0, 1].
        p: total pressure, Pa.
    """
    if not (0.0 <= phi <= 1.0):
        raise PsychroError(f"relative humidity {phi} outside [0, 1]")
    p_v = phi * saturation_pressure(T)
    if p_v >= p:
        raise PsychroError(f"vapor pressure {p_v} Pa >= total pressure {p} Pa")
    return MW_RATIO * p_v / (p - p_v)


def saturation_humidity_ratio(T: float, p: float) -> float:
    """Humidity ratio of saturated air at (T, p)."""
    return humidity_ratio_from_rh(T, 1.0, p)


def moist_air_enthalpy(T: float, X: float) -> float:
    """Moist-air specific enthalpy, J per kg dry air (0 degC datum).

    h = c_p_da*t + X*(h_fg_0 + c_p_v*t) with t in degC.
    """
    if X < 0.0:
        raise PsychroError(f"humidity ratio {X} must be >= 0")
    t = T - KELVIN
    return C_P_DA * t + X * (H_FG_0 + C_P_V * t)


def latent_heat(T: float) -> float:
    """Latent heat of vaporization of water at T, J/kg (linear correlation)."""
    return H_FG_0 - 2361.0 * (T - KELVIN)


@dataclass(frozen=True)
class MoistAirState:
    """One moist-air state: dry-bulb T (K), humidity ratio X, pressure p (Pa).

    Construction validates the temperature window, non-negative X, and that
    X does not exceed saturation at (T, p) beyond a small solver tolerance.
    """

    T: float
    X: float
    p: float

    def __post_init__(self) -> None:
        if not (T_MIN <= self.T <= T_MAX):
            raise PsychroError(
                f"temperature {self.T} K outside [{T_MIN}, {T_MAX}] K"
            )
        if self.X < 0.0:
            raise PsychroError(f"humidity ratio {self.X} must be >= 0")
        if self.p <= 0.0:
            raise PsychroError(f"pressure {self.p} Pa must be > 0")
        x_sat = saturation_humidity_ratio(self.T, self.p)
        if self.X > x_sat * (1.0 + 1e-6) + 1e-9:
            raise PsychroError(
                f"humidity ratio {self.X} exceeds saturation {x_sat} at T={self.T} K"
            )

    @property
    def relative_humidity(self) -> float:
        """Relative humidity derived from (T, X, p)."""
        p_v = self.X * self.p / (MW_RATIO + self.X)
        return p_v / saturation_pressure(self.T)


def wetbulb_temperature(T: float, X: float, p: float) -> float:
    """Thermodynamic wet-bulb temperature, K.

    Solves the adiabatic-saturation balance
        h(T_wb, X_sat(T_wb)) = h(T, X) + (X_sat(T_wb) - X) * c_p_w * t_wb
    by bisection to 1e-4 K. For saturated (or marginally supersaturated)
    input the dry-bulb temperature itself is returned.

    Raises:
        PsychroError: invalid state or no convergence within 100 iterations.
    """
    state = MoistAirState(T, X, p)  # validates inputs
    h_in = moist_air_enthalpy(T, X)

    def residual(t_wb: float) -> float:
        x_wb = saturation_humidity_ratio(t_wb, p)
        h_liq = C_P_W * (t_wb - KELVIN)
        return moist_air_enthalpy(t_wb, x_wb) - h_in - (x_wb - state.X) * h_liq

    if residual(T) <= 0.0:
        # Saturated within tolerance: wet bulb coincides with dry bulb.
        return T
    lo = max(T_MIN, T - 100.0)
    hi = T
    if residual(lo) > 0.0:
        raise PsychroError(f"wet-bulb bracket failed for T={T} K, X={X}")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-4:
            return 0.5 * (lo + hi)
    raise PsychroError("wet-bulb iteration did not converge in 100 iterations")
