"""Trim-and-respond baseline controllers for both plant sides.

The cabinet-side loop trims the shared coolant setpoint up a little when no
cabinet asks for cooling and responds down proportionally to the number of
requests. The tower-side loop trims the leaving-water setpoint up and
responds down while the coolant loop is pinned near its lower bound, with a
wet-bulb-tracking override that keeps the setpoint from chasing unreachable
water temperatures.

All setpoints here are degC; observation temperatures arrive in K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .env import StepOutcome
from .topology import SystemTopology, TowerParams

KELVIN = 273.15


class BaselineError(ValueError):
    """Raised for malformed controller inputs."""


@dataclass(frozen=True)
class TrimRespondParams:
    """Tuning of both trim-and-respond loops.

    Attributes:
        coolant_min / coolant_max: coolant setpoint bounds, degC.
        trim_amount: upward creep per control interval, degC.
        respond_amount: downward step per request (cabinet side) or per
            interval while latched (tower side), degC.
        request_threshold: minimum total requests before responding.
        critical_threshold / warning_threshold: cabinet hot-spot levels, degC.
        persistence_s: how long a level must hold before it counts, s.
        util_threshold: utilization above which a rising cabinet asks for
            one increment of cooling.
        rising_eps: temperature rise per interval that counts as rising, degC.
        control_interval_s: controller cadence, s.
        latch_set_factor / latch_clear_factor: hysteresis on the coolant
            setpoint (relative to coolant_min) that drives the tower latch.
        override_margin: slack under the wet-bulb tracking level before the
            override lifts the setpoint, degC.
    """

    coolant_min: float = 18.0
    coolant_max: float = 30.0
    trim_amount: float = 0.1
    respond_amount: float = 0.3
    request_threshold: int = 2
    critical_threshold: float = 40.0
    warning_threshold: float = 35.0
    persistence_s: float = 120.0
    util_threshold: float = 0.85
    rising_eps: float = 0.05
    control_interval_s: float = 120.0
    latch_set_factor: float = 1.05
    latch_clear_factor: float = 1.15
    override_margin: float = 0.5


@dataclass(frozen=True)
class ThermalTimers:
    """Per-cabinet clocks of how long each hot-spot level has held, s."""

    critical: tuple[float, ...]
    warning: tuple[float, ...]

    @staticmethod
    def zeros(num_cabinets: int) -> "ThermalTimers":
        z = tuple(0.0 for _ in range(num_cabinets))
        return ThermalTimers(critical=z, warning=z)


def cooling_requests(
    temps: Sequence[float],
    utils: Sequence[float],
    temp_rising: Sequence[bool],
    timers: ThermalTimers,
    params: TrimRespondParams,
    dt: float,
) -> tuple[int, ThermalTimers]:
    """Count cooling requests across cabinets and advance the hold timers.

    Per cabinet: 3 requests once its hot-spot has been above the critical
    level for ``persistence_s``; else 2 for the warning level; else 1 when
    utilization is high and the temperature is rising; else 0.

    Args:
        temps: per-cabinet hot-spot temperature, degC.
        utils: per-cabinet utilization in [0, 1].
        temp_rising: per-cabinet rising flag.
        timers: hold clocks from the previous evaluation.
        dt: time since the previous evaluation, s.

    Returns:
        (total requests, advanced timers).
    """
    n = len(temps)
    if not (len(utils) == len(temp_rising) == len(timers.critical) == n):
        raise BaselineError("temps, utils, rising flags, and timers must align")
    if dt <= 0.0:
        raise BaselineError(f"evaluation interval {dt} s must be > 0")

    total = 0
    crit = []
    warn = []
    for i in range(n):
        c = timers.critical[i] + dt if temps[i] > params.critical_threshold else 0.0
        w = timers.warning[i] + dt if temps[i] > params.warning_threshold else 0.0
        crit.append(c)
        warn.append(w)
        if c >= params.persistence_s:
            total += 3
        elif w >= params.persistence_s:
            total += 2
        elif utils[i] > params.util_threshold and temp_rising[i]:
            total += 1
    return total, ThermalTimers(critical=tuple(crit), warning=tuple(warn))


def coolant_trim_respond(
    coolant_setpoint: float, total_requests: int, params: TrimRespondParams
) -> float:
    """One coolant-loop update: trim up on silence, respond down on demand.

    No requests raise the setpoint by ``trim_amount``; ``request_threshold``
    or more lower it by ``respond_amount`` per request; in between it holds.
    The result is clamped to [coolant_min, coolant_max].
    """
    if total_requests < 0:
        raise BaselineError(f"request count {total_requests} must be >= 0")
    sp = coolant_setpoint
    if total_requests == 0:
        sp += params.trim_amount
    elif total_requests >= params.request_threshold:
        sp -= params.respond_amount * total_requests
    return min(max(sp, params.coolant_min), params.coolant_max)


def ct_trim_respond(
    lwt_setpoint: float,
    latched: bool,
    T_owb_c: float,
    coolant_setpoint: float,
    params: TrimRespondParams,
    tower: TowerParams,
) -> tuple[float, bool]:
    """One tower-loop update of the leaving-water setpoint.

    The latch engages while the coolant loop is pinned near its lower bound
    (setpoint below ``latch_set_factor * coolant_min``) and clears above
    ``latch_clear_factor * coolant_min``. Latched intervals respond the
    leaving-water setpoint down; unlatched intervals trim it up. An override
    then lifts any setpoint chasing below the wet-bulb tracking level
    (wet bulb + optimal approach), and the result is clamped to
    [wet bulb + min approach, lwt_max].

    Args:
        lwt_setpoint: current leaving-water setpoint, degC.
        latched: latch state from the previous interval.
        T_owb_c: ambient wet-bulb temperature, degC.
        coolant_setpoint: current cabinet coolant setpoint, degC.

    Returns:
        (new setpoint degC, new latch state).
    """
    if coolant_setpoint < params.latch_set_factor * params.coolant_min:
        latched = True
    elif coolant_setpoint > params.latch_clear_factor * params.coolant_min:
        latched = False

    sp = lwt_setpoint - params.respond_amount if latched else lwt_setpoint + params.trim_amount

    track = T_owb_c + tower.optimal_approach
    if sp < track - params.override_margin:
        sp = track

    lo = T_owb_c + tower.min_approach
    return min(max(sp, lo), tower.lwt_max), latched


def inverse_scale_action(value: float, lo: float, hi: float) -> float:
    """Raw command in [-1, 1] that ``scale_action`` maps back onto ``value``."""
    if hi <= lo:
        raise BaselineError(f"empty range [{lo}, {hi}]")
    raw = 2.0 * (value - lo) / (hi - lo) - 1.0
    return min(max(raw, -1.0), 1.0)


@dataclass
class _ControllerState:
    coolant_setpoint: float
    lwt_setpoint: float
    timers: ThermalTimers
    latched: bool = False
    prev_max_temps: tuple[float, ...] = field(default_factory=tuple)
    next_update: float = 0.0
    initialized: bool = False


class TrimRespondController:
    """Stateful baseline issuing environment actions at a fixed cadence.

    Between control instants the previous setpoints are held. Cabinet flow
    stays mid-range and valves stay uniform; only the two setpoints move.
    """

    def __init__(
        self,
        topology: SystemTopology,
        params: TrimRespondParams | None = None,
    ):
        self.topology = topology
        self.params = params or TrimRespondParams()
        n = topology.num_cabinets
        p = self.params
        self._state = _ControllerState(
            coolant_setpoint=0.5 * (p.coolant_min + p.coolant_max),
            lwt_setpoint=0.0,  # adopted from the plant on first observation
            timers=ThermalTimers.zeros(n),
        )

    @property
    def coolant_setpoint(self) -> float:
        return self._state.coolant_setpoint

    @property
    def lwt_setpoint(self) -> float:
        return self._state.lwt_setpoint

    def act(
        self, outcome: StepOutcome
    ) -> tuple[list[list[float]], None, list[float]]:
        """Map the latest outcome to raw env actions.

        Returns:
            (blade action rows, None, tower setpoints degC) — the tower side
            is commanded with absolute setpoints.
        """
        topo = self.topology
        b = topo.blade_groups_per_cabinet
        st = self._state
        p = self.params

        if not st.initialized:
            st.lwt_setpoint = outcome.info["lwt_setpoints_c"][0]
            st.prev_max_temps = tuple(
                max(obs[:b]) - KELVIN for obs in outcome.blade_obs
            )
            st.initialized = True

        elapsed = outcome.info["elapsed_s"]
        if elapsed >= st.next_update:
            max_temps = [max(obs[:b]) - KELVIN for obs in outcome.blade_obs]
            p_nom_kw = topo.cabinet.P_nom / 1000.0
            utils = [
                min(1.0, max(0.0, sum(obs[b:]) / (b * p_nom_kw)))
                for obs in outcome.blade_obs
            ]
            rising = [
                t - prev > p.rising_eps
                for t, prev in zip(max_temps, st.prev_max_temps)
            ]
            total, st.timers = cooling_requests(
                max_temps, utils, rising, st.timers, p, p.control_interval_s
            )
            st.coolant_setpoint = coolant_trim_respond(st.coolant_setpoint, total, p)
            t_owb_c = outcome.info["t_owb_k"] - KELVIN
            st.lwt_setpoint, st.latched = ct_trim_respond(
                st.lwt_setpoint, st.latched, t_owb_c,
                st.coolant_setpoint, p, topo.tower,
            )
            st.prev_max_temps = tuple(max_temps)
            st.next_update += p.control_interval_s

        sp_raw = inverse_scale_action(
            st.coolant_setpoint, *topo.cabinet.coolant_setpoint_range
        )
        uniform = 1.0 / b
        blade_row = [sp_raw, 0.0] + [uniform] * b
        blade_actions = [list(blade_row) for _ in range(topo.num_cabinets)]
        ct_setpoints = [st.lwt_setpoint] * topo.num_towers
        return blade_actions, None, ct_setpoints
