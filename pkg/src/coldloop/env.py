"""Plant environment: two coupled decision processes over one physics core.

Cabinet-side agents pick a coolant setpoint, a cabinet flow, and a valve
split per cabinet; tower-side agents nudge each tower's leaving-water
setpoint by a discrete delta. One environment step advances the plant by
``step_size`` seconds of physics in fixed ``sim_time_step`` substeps:

    trace -> cabinets -> facility hot return -> heat recovery -> towers
          -> next facility supply

Rewards are decomposed per unit: each cabinet is charged its own blade-group
temperatures (degC), each tower its own fan powers (kW). The environment is
fully deterministic given (topology, trace); the seed is stored only for
bookkeeping symmetry with the agents.

Temperatures are Kelvin unless a name says degC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Sequence

from .blades import (
    BladeGroupState,
    CabinetActuation,
    cdu_loop_step,
    conductance_from_flow,
    delivered_supply_temperature,
    phi_scale,
)
from .hru import hru_step
from .psychro import MoistAirState, saturation_humidity_ratio
from .topology import SystemTopology
from .tower import tower_cell_step
from .trace import ExogenousTrace

KELVIN = 273.15
ATM_PRESSURE = 101325.0  # Pa

# Observation clamp windows.
OBS_T_MIN = 273.15  # K
OBS_T_MAX = 373.15  # K
OBS_P_MAX_KW = 400.0  # kW per blade group

# Offset applied per blade group to report a shifted (mostly positive)
# cabinet reward alongside the raw one.
REWARD_SHIFT_PER_GROUP = 100.0


class EnvError(RuntimeError):
    """Raised for invalid actions, shape mismatches, or stepping when done."""


@dataclass(frozen=True)
class StepOutcome:
    """Everything an environment step returns.

    Attributes:
        blade_obs: per-cabinet observation, each (T_1..T_B K clamped,
            P_1..P_B kW clamped), length 2B.
        ct_obs: per-tower observation, each (own cell fan powers kW,
            every tower's water return K, wet bulb K), length m + N + 1.
        blade_rewards: per-cabinet reward, -sum of its group temperatures
            in degC at the end of the step (unclamped).
        ct_rewards: per-tower reward, -sum of its substep-mean cell fan
            powers in kW.
        done: True once the episode horizon is reached.
        info: JSON-serializable diagnostics (substep-mean powers and flows,
            end-of-step temperatures, recovered heat, counters).
    """

    blade_obs: tuple[tuple[float, ...], ...]
    ct_obs: tuple[tuple[float, ...], ...]
    blade_rewards: tuple[float, ...]
    ct_rewards: tuple[float, ...]
    done: bool
    info: dict[str, Any]


def outcome_to_dict(outcome: StepOutcome) -> dict[str, Any]:
    """Plain-dict form of a step outcome (JSON-ready)."""
    return {
        "blade_obs": [list(o) for o in outcome.blade_obs],
        "ct_obs": [list(o) for o in outcome.ct_obs],
        "blade_rewards": list(outcome.blade_rewards),
        "ct_rewards": list(outcome.ct_rewards),
        "done": outcome.done,
        "info": outcome.info,
    }


def outcome_to_jsonl(outcome: StepOutcome) -> str:
    """Canonical single-line JSON for run logs (sorted keys, no spaces)."""
    return json.dumps(outcome_to_dict(outcome), sort_keys=True, separators=(",", ":"))


def scale_action(raw: float, lo: float, hi: float) -> tuple[float, bool]:
    """Map a raw action from [-1, 1] onto [lo, hi] linearly.

    Out-of-range raw values are clamped first and flagged (second element)
    rather than rejected.
    """
    clamped = raw
    flagged = False
    if raw < -1.0:
        clamped, flagged = -1.0, True
    elif raw > 1.0:
        clamped, flagged = 1.0, True
    return lo + (clamped + 1.0) * 0.5 * (hi - lo), flagged


def project_valves(raw: Sequence[float]) -> tuple[float, ...]:
    """Project arbitrary valve commands onto the open simplex.

    Clips every entry to [1e-6, 1] and renormalizes to sum 1, so each
    projected opening lies in (0, 1) and no branch is ever fully shut.
    """
    if len(raw) == 0:
        raise EnvError("valve command must have at least one entry")
    clipped = [min(1.0, max(1e-6, float(v))) for v in raw]
    total = sum(clipped)
    return tuple(v / total for v in clipped)


def apply_ct_delta(
    setpoint_c: float, action_idx: int, topology: SystemTopology, T_owb: float
) -> float:
    """Apply one discrete setpoint delta and clamp to the feasible window.

    The window is [wet bulb degC + min approach, lwt_max]; when a hot wet
    bulb inverts the window, the ceiling wins.

    Args:
        setpoint_c: current leaving-water setpoint, degC.
        action_idx: index into ``topology.ct_action_deltas``.
        T_owb: ambient wet-bulb temperature, K.
    """
    deltas = topology.ct_action_deltas
    if not (0 <= action_idx < len(deltas)):
        raise EnvError(
            f"tower action index {action_idx} outside [0, {len(deltas) - 1}]"
        )
    lo = (T_owb - KELVIN) + topology.tower.min_approach
    hi = topology.tower.lwt_max
    return min(max(setpoint_c + deltas[action_idx], lo), hi)


def decompose_blade_obs(
    temps: Sequence[Sequence[float]], powers_kw: Sequence[Sequence[float]]
) -> tuple[tuple[float, ...], ...]:
    """Split global blade state into per-cabinet observations.

    Cabinet i sees exactly its own (T_i1..T_iB, P_i1..P_iB).
    """
    if len(temps) != len(powers_kw):
        raise EnvError("temperature and power blocks must cover the same cabinets")
    out = []
    for t_row, p_row in zip(temps, powers_kw):
        if len(t_row) != len(p_row):
            raise EnvError("temperature and power rows must share length")
        out.append(tuple(t_row) + tuple(p_row))
    return tuple(out)


def decompose_ct_obs(
    cell_powers_kw: Sequence[Sequence[float]],
    return_temps: Sequence[float],
    T_owb: float,
) -> tuple[tuple[float, ...], ...]:
    """Split tower-side state into per-tower observations.

    Tower i sees its own cell powers, every tower's water return, and the
    shared wet bulb.
    """
    if len(cell_powers_kw) != len(return_temps):
        raise EnvError("cell powers and return temperatures must cover all towers")
    rets = tuple(return_temps)
    return tuple(tuple(p) + rets + (T_owb,) for p in cell_powers_kw)


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


class PlantEnv:
    """Deterministic plant simulator exposed as a two-sided environment."""

    def __init__(self, topology: SystemTopology, trace: ExogenousTrace, seed: int = 0):
        c = topology.num_cabinets
        b = topology.blade_groups_per_cabinet
        if trace.loads.shape[1:] != (c, b):
            raise EnvError(
                f"trace load block {trace.loads.shape[1:]} does not match "
                f"plant layout ({c}, {b})"
            )
        self.topology = topology
        self.trace = trace
        self.seed = seed
        self._n_towers = topology.num_towers
        self._n_cells = topology.cells_per_tower
        self._n_cabinets = c
        self._n_groups = b
        self._dt = topology.timing.sim_time_step
        self._substeps = topology.substeps_per_step
        self._episode_steps = topology.episode_steps
        self._m_cell = topology.tower.design_water_flow / self._n_cells
        self._m_tot = topology.num_towers * topology.tower.design_water_flow
        self._coolant_cp = 4186.0
        self.clamp_warnings = 0
        self._started = False

    # -- space descriptors -------------------------------------------------

    @property
    def blade_obs_dim(self) -> int:
        return 2 * self._n_groups

    @property
    def ct_obs_dim(self) -> int:
        return self._n_cells + self._n_towers + 1

    @property
    def blade_action_dim(self) -> int:
        return 2 + self._n_groups

    @property
    def ct_action_count(self) -> int:
        return len(self.topology.ct_action_deltas)

    @property
    def num_cabinets(self) -> int:
        return self._n_cabinets

    @property
    def num_towers(self) -> int:
        return self._n_towers

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int | None = None) -> StepOutcome:
        """Start an episode from a quasi-steady plant state at trace time 0.

        One non-iterated pass: coolant setpoints at their range midpoint,
        cabinet flows mid-range, uniform valves, tower setpoints at the
        middle of their feasible window; blade groups at their equilibrium
        for the initial loads; one tower solve fixes the initial supply.
        """
        if seed is not None:
            self.seed = seed
        topo = self.topology
        cab = topo.cabinet
        self._step_count = 0
        self._elapsed = 0.0
        self.clamp_warnings = 0
        self._started = True
        self._done = False

        t_owb0, loads0 = self.trace.query(0.0)
        loads0 = loads0.tolist()

        sp_lo, sp_hi = cab.coolant_setpoint_range
        sp_c = 0.5 * (sp_lo + sp_hi)
        flow = 0.5 * (cab.flow_range[0] + cab.flow_range[1])
        valves = tuple(1.0 / self._n_groups for _ in range(self._n_groups))

        lwt_lo = (t_owb0 - KELVIN) + topo.tower.min_approach
        lwt_hi = topo.tower.lwt_max
        lwt_sp = 0.5 * (lwt_lo + lwt_hi)
        self._lwt_setpoints = [lwt_sp] * self._n_towers

        supply = lwt_sp + KELVIN
        states: list[tuple[BladeGroupState, ...]] = []
        q_total = 0.0
        delivered_list = []
        for i in range(self._n_cabinets):
            delivered = delivered_supply_temperature(sp_c + KELVIN, supply, cab)
            delivered_list.append(delivered)
            groups = []
            for j in range(self._n_groups):
                g = conductance_from_flow(flow, valves[j], cab)
                phi = phi_scale(loads0[i][j], cab.phi, cab.P_nom)
                groups.append(BladeGroupState(T=delivered + phi / g))
                q_total += phi
            states.append(tuple(groups))
        self._blade_states = states

        t_hot = supply + q_total / (self._m_tot * self._coolant_cp)
        t_ret, q_rec = self._recover(t_hot)

        air_in = MoistAirState(
            T=t_owb0, X=saturation_humidity_ratio(t_owb0, ATM_PRESSURE), p=ATM_PRESSURE
        )
        t_outs = []
        cell_powers = []
        m_evaps = []
        q_cells = []
        for i in range(self._n_towers):
            cell = tower_cell_step(
                (t_ret, self._m_cell),
                self._lwt_setpoints[i],
                (t_owb0, air_in),
                topo.tower,
                self._dt,
            )
            t_outs.append(cell.T_out)
            cell_powers.append([cell.P_fan] * self._n_cells)
            m_evaps.append(cell.m_evap * self._n_cells)
            q_cells.append(cell.Q_tot * self._n_cells)
        supply = sum(t_outs) / self._n_towers
        self._facility_supply = supply
        self._t_ret = t_ret

        q_cabs = [
            sum(
                phi_scale(loads0[i][j], cab.phi, cab.P_nom)
                for j in range(self._n_groups)
            )
            for i in range(self._n_cabinets)
        ]
        return self._outcome(
            q_cabs=q_cabs,
            cell_powers=cell_powers,
            t_outs=t_outs,
            m_evaps=m_evaps,
            q_rec=q_rec,
            delivered=delivered_list,
            rewards_zero=True,
        )

    def step(
        self,
        blade_actions: Sequence[Sequence[float]],
        ct_actions: Sequence[int] | None,
        *,
        ct_setpoints: Sequence[float] | None = None,
    ) -> StepOutcome:
        """Advance the plant one control step.

        Args:
            blade_actions: one row per cabinet, (setpoint_raw, flow_raw,
                valve commands...), raw values nominally in [-1, 1].
            ct_actions: one delta index per tower (ignored when
                ``ct_setpoints`` is given).
            ct_setpoints: absolute leaving-water setpoints in degC, clamped
                to the feasible window exactly like delta actions.

        Raises:
            EnvError: stepping a finished episode, or malformed actions.
        """
        if not self._started:
            raise EnvError("reset the environment before stepping")
        if self._done:
            raise EnvError("episode is done; reset before stepping again")
        topo = self.topology
        cab = topo.cabinet
        if len(blade_actions) != self._n_cabinets:
            raise EnvError(
                f"{len(blade_actions)} cabinet actions for {self._n_cabinets} cabinets"
            )

        t_owb_start, _ = self.trace.query(self._elapsed)

        # Tower setpoints first: either absolute commands or delta indices.
        if ct_setpoints is not None:
            if len(ct_setpoints) != self._n_towers:
                raise EnvError(
                    f"{len(ct_setpoints)} tower setpoints for {self._n_towers} towers"
                )
            lo = (t_owb_start - KELVIN) + topo.tower.min_approach
            hi = topo.tower.lwt_max
            self._lwt_setpoints = [
                min(max(float(s), lo), hi) for s in ct_setpoints
            ]
        else:
            if ct_actions is None or len(ct_actions) != self._n_towers:
                raise EnvError(
                    f"expected {self._n_towers} tower actions, got "
                    f"{None if ct_actions is None else len(ct_actions)}"
                )
            self._lwt_setpoints = [
                apply_ct_delta(self._lwt_setpoints[i], int(a), topo, t_owb_start)
                for i, a in enumerate(ct_actions)
            ]

        # Cabinet actuation from raw commands.
        acts = []
        for row in blade_actions:
            if len(row) != 2 + self._n_groups:
                raise EnvError(
                    f"cabinet action must have {2 + self._n_groups} entries, "
                    f"got {len(row)}"
                )
            sp, f1 = scale_action(float(row[0]), *cab.coolant_setpoint_range)
            flow, f2 = scale_action(float(row[1]), *cab.flow_range)
            self.clamp_warnings += int(f1) + int(f2)
            acts.append(
                CabinetActuation(
                    T_supply_setpoint=sp,
                    m_flow=flow,
                    valves=project_valves([float(v) for v in row[2:]]),
                )
            )

        # Substep loop with running sums for the step-mean diagnostics.
        n_sub = self._substeps
        dt = self._dt
        q_cab_sum = [0.0] * self._n_cabinets
        p_cell_sum = [0.0] * self._n_towers
        m_evap_sum = [0.0] * self._n_towers
        q_rec_sum = 0.0
        delivered_last = [0.0] * self._n_cabinets
        t_outs = [0.0] * self._n_towers
        t_ret = self._t_ret
        supply = self._facility_supply
        m_cp_tot = self._m_tot * self._coolant_cp

        for k in range(n_sub):
            t_now = self._elapsed + k * dt
            t_owb, loads = self.trace.query(t_now)
            loads = loads.tolist()

            q_total = 0.0
            for i in range(self._n_cabinets):
                res = cdu_loop_step(
                    self._blade_states[i], acts[i], loads[i], supply, dt, cab
                )
                self._blade_states[i] = res.new_states
                q_cab_sum[i] += res.Q_cabinet
                q_total += res.Q_cabinet
                delivered_last[i] = res.delivered_T

            t_hot = supply + q_total / m_cp_tot
            t_ret, q_rec = self._recover(t_hot)
            q_rec_sum += q_rec

            air_in = MoistAirState(
                T=t_owb,
                X=saturation_humidity_ratio(t_owb, ATM_PRESSURE),
                p=ATM_PRESSURE,
            )
            supply_acc = 0.0
            for i in range(self._n_towers):
                cell = tower_cell_step(
                    (t_ret, self._m_cell),
                    self._lwt_setpoints[i],
                    (t_owb, air_in),
                    topo.tower,
                    dt,
                )
                p_cell_sum[i] += cell.P_fan
                m_evap_sum[i] += cell.m_evap * self._n_cells
                t_outs[i] = cell.T_out
                supply_acc += cell.T_out
            supply = supply_acc / self._n_towers

        self._facility_supply = supply
        self._t_ret = t_ret
        self._elapsed += topo.timing.step_size
        self._step_count += 1
        self._done = self._step_count >= self._episode_steps

        inv = 1.0 / n_sub
        return self._outcome(
            q_cabs=[q * inv for q in q_cab_sum],
            cell_powers=[
                [p * inv] * self._n_cells for p in p_cell_sum
            ],
            t_outs=t_outs,
            m_evaps=[m * inv for m in m_evap_sum],
            q_rec=q_rec_sum * inv,
            delivered=delivered_last,
            rewards_zero=False,
        )

    # -- internals ----------------------------------------------------------

    def _recover(self, t_hot: float) -> tuple[float, float]:
        """Apply heat recovery to the facility hot return, if configured."""
        hru = self.topology.hru
        if hru is None:
            return t_hot, 0.0
        return hru_step(t_hot, self._m_tot, self._coolant_cp, hru)

    def _outcome(
        self,
        q_cabs: list[float],
        cell_powers: list[list[float]],
        t_outs: list[float],
        m_evaps: list[float],
        q_rec: float,
        delivered: list[float],
        rewards_zero: bool,
    ) -> StepOutcome:
        t_obs, loads_obs = self.trace.query(self._elapsed)
        loads_kw = loads_obs / 1000.0

        temps_clamped = []
        temps_raw = []
        for groups in self._blade_states:
            row = [g.T for g in groups]
            temps_raw.append(row)
            temps_clamped.append([_clamp(t, OBS_T_MIN, OBS_T_MAX) for t in row])
        powers_clamped = [
            [_clamp(float(p), 0.0, OBS_P_MAX_KW) for p in row] for row in loads_kw
        ]
        blade_obs = decompose_blade_obs(temps_clamped, powers_clamped)

        cell_kw = [[p / 1000.0 for p in row] for row in cell_powers]
        ret_temps = [self._t_ret] * self._n_towers
        ct_obs = decompose_ct_obs(cell_kw, ret_temps, t_obs)

        if rewards_zero:
            blade_rewards = tuple(0.0 for _ in range(self._n_cabinets))
            ct_rewards = tuple(0.0 for _ in range(self._n_towers))
        else:
            blade_rewards = tuple(
                -sum(t - KELVIN for t in row) for row in temps_raw
            )
            ct_rewards = tuple(-sum(row) for row in cell_kw)

        shift = REWARD_SHIFT_PER_GROUP * self._n_groups
        info = {
            "step": self._step_count,
            "elapsed_s": self._elapsed,
            "t_owb_k": t_obs,
            "q_cabinet_w": list(q_cabs),
            "p_cell_w": [list(row) for row in cell_powers],
            "t_out_k": list(t_outs),
            "t_ret_k": ret_temps,
            "m_evap_kg_s": list(m_evaps),
            "q_recovered_w": q_rec,
            "blade_t_k": [list(row) for row in temps_raw],
            "coolant_supply_t_k": list(delivered),
            "facility_supply_t_k": self._facility_supply,
            "lwt_setpoints_c": list(self._lwt_setpoints),
            "blade_rewards_shifted": [r + shift for r in blade_rewards],
            "clamp_warnings": self.clamp_warnings,
        }
        return StepOutcome(
            blade_obs=blade_obs,
            ct_obs=ct_obs,
            blade_rewards=blade_rewards,
            ct_rewards=ct_rewards,
            done=self._done,
            info=info,
        )


def make_env(topology: SystemTopology, trace: ExogenousTrace, seed: int = 0) -> PlantEnv:
    """Build a plant environment (does not reset it)."""
    return PlantEnv(topology, trace, seed)
