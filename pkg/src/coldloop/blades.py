"""Blade-group thermal dynamics and the cabinet coolant loop.

Each cabinet holds B blade groups, lumped as one thermal mass each. A group
heats with its electrical load (through a quadratic loss polynomial) and
rejects heat into the coolant through a flow-dependent conductance. The
cabinet-level step advances every group one substep with classic RK4 and
closes the loop with the coolant energy balance.

All temperatures are Kelvin unless a name says degC. Pure scalar float math:
these functions sit on the simulator hot path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .topology import CabinetParams, PhiPoly

# Specific heat of the secondary coolant (treated as water), J/(kg K).
COOLANT_C_P = 4186.0

KELVIN = 273.15


class BladeModelError(ValueError):
    """Raised for invalid blade-model inputs (negative loads, bad actuation)."""


@dataclass(frozen=True)
class BladeGroupState:
    """Lumped state of one blade group.

    Attributes:
        T: group temperature, K.
        accumulated_heat: cumulative heat generated by the group, J
            (diagnostic integral of the dissipation polynomial over time).
    """

    T: float
    accumulated_heat: float = 0.0


@dataclass(frozen=True)
class CabinetActuation:
    """Per-cabinet control inputs for one step.

    Attributes:
        T_supply_setpoint: coolant supply setpoint, degC.
        m_flow: cabinet coolant mass flow, kg/s.
        valves: per-group valve openings; each in [0, 1], summing to 1.
    """

    T_supply_setpoint: float
    m_flow: float
    valves: tuple[float, ...]


@dataclass(frozen=True)
class CabinetStepResult:
    """Outcome of one cabinet substep.

    Attributes:
        new_states: advanced blade-group states.
        Q_cabinet: heat removed by the coolant over the substep, W
            (evaluated at the step-midpoint group temperatures).
        coolant_return_T: cabinet coolant return temperature, K.
        delivered_T: coolant supply temperature actually delivered, K
            (setpoint, or the facility-side floor when the setpoint is
            unreachable through the distribution heat exchanger).
    """

    new_states: tuple[BladeGroupState, ...]
    Q_cabinet: float
    coolant_return_T: float
    delivered_T: float


def phi_scale(P_branch: float, poly: PhiPoly, P_nom: float) -> float:
    """Heat dissipated by a group drawing electrical power ``P_branch``, W.

    Evaluates (a0 + a1*u + a2*u^2) * P_nom at utilization u = P_branch/P_nom.
    """
    if P_branch < 0.0:
        raise BladeModelError(f"branch power {P_branch} W must be >= 0")
    if P_nom <= 0.0:
        raise BladeModelError(f"nominal power {P_nom} W must be > 0")
    u = P_branch / P_nom
    return (poly.a0 + poly.a1 * u + poly.a2 * u * u) * P_nom


def conductance_from_flow(m_flow: float, valve: float, params: CabinetParams) -> float:
    """Coolant-side thermal conductance of one group branch, W/K.

    G = G_nom * (valve * m_flow / m_nom)**e, zero at zero branch flow.
    """
    if m_flow < 0.0:
        raise BladeModelError(f"cabinet flow {m_flow} kg/s must be >= 0")
    if not (0.0 <= valve <= 1.0):
        raise BladeModelError(f"valve opening {valve} outside [0, 1]")
    branch = valve * m_flow / params.m_nom
    if branch <= 0.0:
        return 0.0
    return params.G_nom * branch**params.conductance_exponent


def convective_flow(G_c: float, T_solid: float, T_fluid: float) -> float:
    """Heat flow from solid to fluid through conductance G_c, W."""
    if G_c < 0.0:
        raise BladeModelError(f"conductance {G_c} W/K must be >= 0")
    return G_c * (T_solid - T_fluid)


def steady_state_temperature(
    P_branch: float, T_fluid: float, G_c: float, params: CabinetParams
) -> float:
    """Equilibrium group temperature for constant load and coolant, K."""
    if G_c <= 0.0:
        raise BladeModelError("steady state requires positive conductance")
    return T_fluid + phi_scale(P_branch, params.phi, params.P_nom) / G_c


def blade_group_step(
    state: BladeGroupState,
    P_branch: float,
    T_fluid: float,
    G_c: float,
    dt: float,
    params: CabinetParams,
) -> BladeGroupState:
    """Advance one blade group by ``dt`` seconds with a single RK4 step.

    Integrates dT/dt = (phi - G_c*(T - T_fluid)) / C_th with the load and
    coolant inputs held constant over the substep.
    """
    if dt <= 0.0:
        raise BladeModelError(f"substep {dt} s must be > 0")
    c_th = params.C_th
    if c_th <= 0.0:
        raise BladeModelError(f"thermal capacitance {c_th} J/K must be > 0")
    phi = phi_scale(P_branch, params.phi, params.P_nom)

    def deriv(T: float) -> float:
        return (phi - G_c * (T - T_fluid)) / c_th

    T0 = state.T
    k1 = deriv(T0)
    k2 = deriv(T0 + 0.5 * dt * k1)
    k3 = deriv(T0 + 0.5 * dt * k2)
    k4 = deriv(T0 + dt * k3)
    T1 = T0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return BladeGroupState(T=T1, accumulated_heat=state.accumulated_heat + phi * dt)


def delivered_supply_temperature(
    setpoint_K: float, facility_supply_T: float, params: CabinetParams
) -> float:
    """Coolant supply temperature the distribution unit can actually deliver, K.

    The facility side imposes a floor through the heat exchanger: when the
    setpoint is colder than what a heat exchanger of effectiveness eps can
    reach, the delivered temperature is
    facility_T + (1 - eps) * (setpoint - facility_T).
    """
    eps = params.hx_effectiveness
    floor = facility_supply_T + (1.0 - eps) * (setpoint_K - facility_supply_T)
    return max(setpoint_K, floor)


def cdu_loop_step(
    states: Sequence[BladeGroupState],
    act: CabinetActuation,
    loads: Sequence[float],
    facility_supply_T: float,
    dt: float,
    params: CabinetParams,
) -> CabinetStepResult:
    """Advance one cabinet (all its blade groups) by one substep.

    Every group sees the same delivered coolant temperature; branch
    conductances follow the valve split of the cabinet flow. The heat
    removed is evaluated at midpoint group temperatures, and the coolant
    return closes the energy balance.

    Raises:
        BladeModelError: mismatched lengths or violated actuation invariants.
    """
    n = len(states)
    if len(act.valves) != n:
        raise BladeModelError(
            f"{len(act.valves)} valves for {n} blade groups"
        )
    if len(loads) != n:
        raise BladeModelError(f"{len(loads)} loads for {n} blade groups")
    total = 0.0
    for v in act.valves:
        if not (0.0 <= v <= 1.0):
            raise BladeModelError(f"valve opening {v} outside [0, 1]")
        total += v
    if abs(total - 1.0) > 1e-9:
        raise BladeModelError(f"valve openings sum to {total}, expected 1")
    if act.m_flow < 0.0:
        raise BladeModelError(f"cabinet flow {act.m_flow} kg/s must be >= 0")

    delivered = delivered_supply_temperature(
        act.T_supply_setpoint + KELVIN, facility_supply_T, params
    )

    new_states = []
    q_cabinet = 0.0
    for state, valve, load in zip(states, act.valves, loads):
        g = conductance_from_flow(act.m_flow, valve, params)
        advanced = blade_group_step(state, load, delivered, g, dt, params)
        t_mid = 0.5 * (state.T + advanced.T)
        q_cabinet += g * (t_mid - delivered)
        new_states.append(advanced)

    m_cp = act.m_flow * COOLANT_C_P
    if m_cp > 0.0:
        return_T = delivered + q_cabinet / m_cp
    else:
        return_T = delivered
    return CabinetStepResult(
        new_states=tuple(new_states),
        Q_cabinet=q_cabinet,
        coolant_return_T=return_T,
        delivered_T=delivered,
    )
