"""Evaporative cooling-tower cell model.

One cell = one fan plus its fill section. The water-side outlet temperature
comes from an empirical approach-temperature polynomial in wet-bulb
temperature, normalized water-to-air flow ratio, and (optionally) a heat-load
ratio. The cell picks the smallest fan speed that meets the water setpoint,
then closes the air side: moisture uptake first at constant temperature,
then saturated heating once the air cannot hold more vapor.

Temperatures are Kelvin except where a name says degC.
"""

from __future__ import annotations

from dataclasses import dataclass

from .psychro import (
    C_P_V,
    H_FG_0,
    MoistAirState,
    latent_heat,
    moist_air_enthalpy,
    saturation_humidity_ratio,
)
from .topology import FanParams, TowerParams, YorkCalcCoeffs

KELVIN = 273.15

# Outlet-air temperature ceiling for the saturated-regime solve, K. Hitting
# it means the drawn air flow cannot absorb the rejected heat.
T_AIR_OUT_CAP = 333.15

SPEED_MIN_DEFAULT = 0.1

# Bisection controls: fan-speed resolution and air-side energy closure.
SPEED_TOL = 1e-4
ENERGY_REL_TOL = 1e-8
MAX_ITER = 200


class TowerModelError(ValueError):
    """Raised for invalid tower inputs or a failed air-side closure."""


@dataclass(frozen=True)
class TowerState:
    """Book-keeping state of one tower between steps.

    Attributes:
        T_ret: water return temperature entering the tower, K.
        T_out: water outlet temperature leaving the tower, K.
        setpoint: leaving-water setpoint, degC.
        m_w: water mass flow through the tower, kg/s.
        cell_powers: most recent fan power per cell, W.
    """

    T_ret: float
    T_out: float
    setpoint: float
    m_w: float
    cell_powers: tuple[float, ...]


@dataclass(frozen=True)
class TowerStepResult:
    """Solved quantities of one cell over one substep.

    Attributes:
        Q_tot: heat removed from the water, W (negative means the formula
            produced a warmer outlet than inlet; the air is left untouched).
        Q_sen: sensible part of the air-side uptake, W.
        Q_lat: latent part of the air-side uptake, W.
        m_evap: evaporation rate, kg/s.
        air_out: outlet moist-air state.
        P_fan: fan electrical power, W.
        T_out: leaving-water temperature, K.
        speed_ratio: selected fan speed fraction in [speed_min, 1].
    """

    Q_tot: float
    Q_sen: float
    Q_lat: float
    m_evap: float
    air_out: MoistAirState
    P_fan: float
    T_out: float
    speed_ratio: float


def approach_temperature(
    T_wb_c: float, R_F: float, Q_ratio: float, coeffs: YorkCalcCoeffs
) -> float:
    """Approach of leaving water above ambient wet bulb, K (clamped >= 0).

    Polynomial in wet-bulb temperature (degC), normalized flow ratio, and —
    when ``use_q_ratio`` is set — the heat-load ratio:

        A_R * (c1 + c2*T_wb + c3*T_wb^2 + c4*R + c5*R^2 + c6*R*T_wb
               + c7*Q + c8*Q^2 + c9*Q*T_wb + c10*Q*R)

    Args:
        T_wb_c: ambient wet-bulb temperature, degC.
        R_F: raw water-to-air flow ratio; > 0. Normalized internally by
            ``coeffs.R_F_nom`` before entering the polynomial.
        Q_ratio: heat-load ratio; > 0 required when the Q terms are active.
    """
    if R_F <= 0.0:
        raise TowerModelError(f"flow ratio {R_F} must be > 0")
    c = coeffs.c
    r = R_F / coeffs.R_F_nom
    t = T_wb_c
    value = c[0] + c[1] * t + c[2] * t * t + c[3] * r + c[4] * r * r + c[5] * r * t
    if coeffs.use_q_ratio:
        if Q_ratio <= 0.0:
            raise TowerModelError(f"heat-load ratio {Q_ratio} must be > 0")
        q = Q_ratio
        value += c[6] * q + c[7] * q * q + c[8] * q * t + c[9] * q * r
    return max(0.0, coeffs.A_R * value)


def outlet_water_temperature(T_wb: float, dT_app: float, setpoint: float) -> float:
    """Leaving-water temperature, K: never below setpoint nor the approach floor."""
    if dT_app < 0.0:
        raise TowerModelError(f"approach {dT_app} K must be >= 0")
    return max(setpoint, T_wb + dT_app)


def tower_heat_rejection(m_w: float, T_in: float, T_out: float, c_p_w: float) -> float:
    """Water-side heat rejection m_w * c_p_w * (T_in - T_out), W."""
    if m_w < 0.0:
        raise TowerModelError(f"water flow {m_w} kg/s must be >= 0")
    return m_w * c_p_w * (T_in - T_out)


def fan_power(V_dot: float, dp: float, eta: float) -> float:
    """Fan electrical power from volume flow, pressure rise, efficiency, W."""
    if eta <= 0.0:
        raise TowerModelError(f"fan efficiency {eta} must be > 0")
    if V_dot < 0.0 or dp < 0.0:
        raise TowerModelError("fan flow and pressure rise must be >= 0")
    return V_dot * dp / eta


def fan_power_curve(speed_ratio: float, fan: FanParams) -> float:
    """Fan power at a speed fraction via the cubic affinity law, W."""
    if not (0.0 <= speed_ratio <= 1.0):
        raise TowerModelError(f"fan speed ratio {speed_ratio} outside [0, 1]")
    return fan.P_nom * speed_ratio**3


def solve_outlet_air(
    Q_tot: float, air_in: MoistAirState, m_a: float, h_fg: float
) -> tuple[MoistAirState, float, float, float]:
    """Close the air side for a given heat uptake.

    The air first takes on moisture at constant dry-bulb temperature; once
    saturated, further uptake heats the saturated stream. Splits the total
    into latent (evaporation at ``h_fg``) and sensible parts.

    Args:
        Q_tot: heat absorbed by the air stream, W; must be >= 0.
        air_in: inlet moist-air state.
        m_a: dry-air mass flow, kg/s; must be > 0.
        h_fg: latent heat assigned to the evaporated water, J/kg.

    Returns:
        (air_out, m_evap, Q_sen, Q_lat) with m_evap = m_a * (X_out - X_in).

    Raises:
        TowerModelError: the air flow cannot absorb Q_tot below the outlet
            temperature cap, or the closure fails to converge.
    """
    if Q_tot < 0.0:
        raise TowerModelError(f"air-side heat uptake {Q_tot} W must be >= 0")
    if m_a <= 0.0:
        raise TowerModelError(f"air mass flow {m_a} kg/s must be > 0")
    if Q_tot == 0.0:
        return air_in, 0.0, 0.0, 0.0

    h_in = moist_air_enthalpy(air_in.T, air_in.X)
    h_target = h_in + Q_tot / m_a
    t_in_c = air_in.T - KELVIN

    # Constant-temperature moisture uptake: h is linear in X at fixed T.
    x_const_T = air_in.X + Q_tot / (m_a * (H_FG_0 + C_P_V * t_in_c))
    x_sat_in = saturation_humidity_ratio(air_in.T, air_in.p)

    if x_const_T <= x_sat_in:
        air_out = MoistAirState(T=air_in.T, X=x_const_T, p=air_in.p)
    else:
        # Saturated outlet: solve h(T, X_sat(T)) = h_target on [T_in, cap].
        def h_sat(T: float) -> float:
            return moist_air_enthalpy(T, saturation_humidity_ratio(T, air_in.p))

        if h_sat(T_AIR_OUT_CAP) < h_target:
            raise TowerModelError(
                "air flow cannot absorb the rejected heat below the outlet "
                f"temperature cap ({T_AIR_OUT_CAP} K); increase the air flow"
            )
        lo, hi = air_in.T, T_AIR_OUT_CAP
        tol = ENERGY_REL_TOL * max(abs(h_target), abs(h_in), 1.0)
        t_out = hi
        for i in range(MAX_ITER):
            t_out = 0.5 * (lo + hi)
            diff = h_sat(t_out) - h_target
            if abs(diff) <= tol:
                break
            if diff < 0.0:
                lo = t_out
            else:
                hi = t_out
        else:
            raise TowerModelError(
                f"air-side closure did not converge in {MAX_ITER} iterations"
            )
        air_out = MoistAirState(
            T=t_out, X=saturation_humidity_ratio(t_out, air_in.p), p=air_in.p
        )

    m_evap = m_a * (air_out.X - air_in.X)
    q_lat = m_evap * h_fg
    q_sen = Q_tot - q_lat
    return air_out, m_evap, q_sen, q_lat


def tower_cell_step(
    inflow: tuple[float, float],
    setpoint: float,
    ambient: tuple[float, MoistAirState],
    params: TowerParams,
    dt: float,
    speed_min: float = SPEED_MIN_DEFAULT,
) -> TowerStepResult:
    """Solve one tower cell for one substep (quasi-steady).

    Picks the smallest fan speed in [speed_min, 1] whose achievable outlet
    temperature meets max(setpoint, full-speed floor), then closes the
    water- and air-side balances at that speed.

    Args:
        inflow: (water return temperature K, water mass flow kg/s).
        setpoint: leaving-water setpoint, degC.
        ambient: (wet-bulb temperature K, inlet moist-air state).
        params: tower parameter block.
        dt: substep length, s (accepted for interface symmetry; the cell
            itself carries no storage).
        speed_min: lowest allowed fan speed fraction.
    """
    T_ret, m_w = inflow
    T_wb, air_in = ambient
    if m_w <= 0.0:
        raise TowerModelError(f"water flow {m_w} kg/s must be > 0")
    if not (0.0 < speed_min <= 1.0):
        raise TowerModelError(f"minimum fan speed {speed_min} outside (0, 1]")
    if dt <= 0.0:
        raise TowerModelError(f"substep {dt} s must be > 0")

    setpoint_K = setpoint + KELVIN
    t_wb_c = T_wb - KELVIN
    c_p_w = params.c_p_w

    if params.yorkcalc.use_q_ratio:
        q_design = params.design_water_flow * c_p_w * params.optimal_approach
        q_load = m_w * c_p_w * max(0.0, T_ret - T_wb)
        q_ratio = max(1e-6, q_load / q_design)
    else:
        q_ratio = 1.0

    def achieved(speed: float) -> float:
        r_f = m_w / (params.design_air_flow * speed)
        app = approach_temperature(t_wb_c, r_f, q_ratio, params.yorkcalc)
        return T_wb + app

    target = max(setpoint_K, achieved(1.0))
    if achieved(speed_min) <= target:
        speed = speed_min
    else:
        lo, hi = speed_min, 1.0
        while hi - lo > SPEED_TOL:
            mid = 0.5 * (lo + hi)
            if achieved(mid) <= target:
                hi = mid
            else:
                lo = mid
        speed = hi

    T_out = outlet_water_temperature(T_wb, achieved(speed) - T_wb, setpoint_K)
    Q_tot = tower_heat_rejection(m_w, T_ret, T_out, c_p_w)
    p_fan = fan_power_curve(speed, params.fan)

    if Q_tot <= 0.0:
        return TowerStepResult(
            Q_tot=Q_tot,
            Q_sen=Q_tot,
            Q_lat=0.0,
            m_evap=0.0,
            air_out=air_in,
            P_fan=p_fan,
            T_out=T_out,
            speed_ratio=speed,
        )

    m_a_eff = params.design_air_flow * speed
    air_out, m_evap, q_sen, q_lat = solve_outlet_air(
        Q_tot, air_in, m_a_eff, latent_heat(T_out)
    )
    return TowerStepResult(
        Q_tot=Q_tot,
        Q_sen=q_sen,
        Q_lat=q_lat,
        m_evap=m_evap,
        air_out=air_out,
        P_fan=p_fan,
        T_out=T_out,
        speed_ratio=speed,
    )
